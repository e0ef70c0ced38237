//! Directory-backed disks. Each file portion stored on a disk is one host
//! file `<dir>/f<file_id>.dat`; bytes never written read as zeros.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::PathBuf;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

pub struct Disk {
    pub dir: PathBuf,
    latency_us_per_mib: Mutex<u64>,
    // When the single spindle becomes free.
    arm: Mutex<Instant>,
}

const MIB: u64 = 1 << 20;

impl Disk {
    pub fn new(dir: PathBuf, latency_ms_per_mib: f64) -> io::Result<Disk> {
        fs::create_dir_all(&dir)?;
        Ok(Disk {
            dir,
            latency_us_per_mib: Mutex::new((latency_ms_per_mib * 1000.0).round() as u64),
            arm: Mutex::new(Instant::now()),
        })
    }

    pub fn set_latency(&self, ms_per_mib: f64) {
        *self.latency_us_per_mib.lock().unwrap() = (ms_per_mib * 1000.0).round() as u64;
    }

    pub fn path(&self, file_id: u32) -> PathBuf {
        self.dir.join(format!("f{file_id}.dat"))
    }

    /// Runs `io` as one access of `bytes` under the synthetic latency.
    /// Accesses are queued in arrival order: each is served from when it
    /// arrives or the previous one ends, whichever is later, and returns
    /// once its service time is over.
    fn access<T>(&self, bytes: u64, io: impl FnOnce() -> io::Result<T>) -> io::Result<T> {
        let us = *self.latency_us_per_mib.lock().unwrap() * bytes / MIB;
        let done = {
            let mut free_at = self.arm.lock().unwrap();
            *free_at = (*free_at).max(Instant::now()) + Duration::from_micros(us);
            *free_at
        };
        let r = io();
        let now = Instant::now();
        if done > now {
            thread::sleep(done - now);
        }
        r
    }

    pub fn read(&self, file_id: u32, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let path = self.path(file_id);
        self.access(buf.len() as u64, || {
            buf.fill(0);
            let f = match File::open(&path) {
                Ok(f) => f,
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
                Err(e) => return Err(e),
            };
            let mut done = 0;
            while done < buf.len() {
                let n = f.read_at(&mut buf[done..], offset + done as u64)?;
                if n == 0 {
                    break;
                }
                done += n;
            }
            Ok(())
        })
    }

    pub fn write(&self, file_id: u32, offset: u64, data: &[u8]) -> io::Result<()> {
        let path = self.path(file_id);
        self.access(data.len() as u64, || {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(false)
                .open(&path)?;
            f.write_all_at(data, offset)
        })
    }

    /// Cuts the portion file down to `len` bytes if it is longer.
    pub fn truncate(&self, file_id: u32, len: u64) -> io::Result<()> {
        match OpenOptions::new().write(true).open(self.path(file_id)) {
            Ok(f) => {
                if f.metadata()?.len() > len {
                    f.set_len(len)?;
                }
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e),
        }
    }

    pub fn remove(&self, file_id: u32) -> io::Result<()> {
        match fs::remove_file(self.path(file_id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}
