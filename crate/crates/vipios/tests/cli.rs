use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_vipios");

const CONFIG: &str = "\
# two servers
server 0 127.0.0.1:7400 buffer=16K disks=d0:0 sc cc
server 1 127.0.0.1:7401 buffer=16K disks=d1:0
option stripe=4K inline_threshold=8K
";

fn setup(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

fn vipios(dir: &tempfile::TempDir, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN)
        .current_dir(dir.path())
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn script_prints_values_through_a_strided_view() {
    let script = "\
connect
open data rdwr|create
view 0 0 int
writeseq 0 0 20   # ints 0..19
size 0
view 0 4 int vector(3,1,2;int)
readat 0 0 3
seek 0 1 set
read 0 2
position 0
close 0
remove data
";
    let dir = setup(&[("cfg.txt", CONFIG), ("s.cmd", script)]);
    let (code, out, err) = vipios(&dir, &["script", "--config", "cfg.txt", "--file", "s.cmd"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "0\n80\n1 3 5\n3 5\n3\n");
}

#[test]
fn script_errors_name_the_line() {
    let dir = setup(&[("cfg.txt", CONFIG), ("s.cmd", "connect\nfrobnicate 1\n")]);
    let (code, _, err) = vipios(&dir, &["script", "--config", "cfg.txt", "--file", "s.cmd"]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
    let dir = setup(&[
        ("cfg.txt", CONFIG),
        ("s.cmd", "connect\nopen missing rdonly\n"),
    ]);
    let (code, _, err) = vipios(&dir, &["script", "--config", "cfg.txt", "--file", "s.cmd"]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn bad_configs_exit_with_two() {
    for bad in [
        "server 0 x\n",
        "server 0 127.0.0.1:1 buffer=1K disks=d:0\nserver 0 127.0.0.1:2 buffer=1K disks=e:0\n",
        "option stripe=0\nserver 0 127.0.0.1:1 buffer=1K disks=d:0\n",
        "bogus\n",
    ] {
        let dir = setup(&[("cfg.txt", bad), ("s.cmd", "connect\n")]);
        let (code, _, err) = vipios(&dir, &["script", "--config", "cfg.txt", "--file", "s.cmd"]);
        assert_eq!(code, 2, "{bad}: {err}");
    }
    let dir = setup(&[("s.cmd", "connect\n")]);
    let (code, _, _) = vipios(
        &dir,
        &["script", "--config", "absent.txt", "--file", "s.cmd"],
    );
    assert_eq!(code, 2);
    let dir = setup(&[("cfg.txt", CONFIG)]);
    let (code, _, _) = vipios(&dir, &["regress", "--config", "cfg.txt", "--servers", "3"]);
    assert_eq!(code, 2);
}

#[test]
fn regress_passes_on_one_server() {
    let dir = setup(&[("cfg.txt", CONFIG)]);
    let (code, out, err) = vipios(&dir, &["regress", "--config", "cfg.txt", "--servers", "1"]);
    assert_eq!(code, 0, "{out}{err}");
    assert_eq!(
        out.lines().filter(|l| l.contains("PASS")).count(),
        vipios::regress::SUITES.len()
    );
    assert!(!out.contains("FAIL"));
}

#[test]
fn bench_writes_a_csv_report() {
    let spec = r#"{"file_size": 1048576, "clients": 2, "servers": [1, 2], "iterations": 2, "buffer": 65536}"#;
    let dir = setup(&[("cfg.txt", CONFIG), ("spec.json", spec)]);
    let (code, _, err) = vipios(
        &dir,
        &[
            "bench",
            "--config",
            "cfg.txt",
            "--spec",
            "spec.json",
            "--out",
            "r.csv",
        ],
    );
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], vipios::bench::CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(
        lines[1].starts_with("2,1,") && lines[2].starts_with("2,2,"),
        "{csv}"
    );
}

/// Kills the child if the test ends early.
struct Reaped(std::process::Child);

impl Drop for Reaped {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_script_inspect_and_shutdown_over_tcp() {
    let ports: Vec<u16> = {
        let ls: Vec<_> = (0..2)
            .map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap())
            .collect();
        ls.iter().map(|l| l.local_addr().unwrap().port()).collect()
    };
    let config = format!(
        "server 0 127.0.0.1:{} buffer=16K disks=d0:0 sc cc\nserver 1 127.0.0.1:{} buffer=16K disks=d1:0\noption stripe=4K\n",
        ports[0], ports[1]
    );
    let script =
        "connect\nopen kept rdwr|create\nview 0 0 int\nwriteseq 0 0 5000\nsize 0\nclose 0\n";
    let dir = setup(&[("cfg.txt", &config), ("s.cmd", script)]);
    let mut server = Reaped(
        Command::new(BIN)
            .current_dir(dir.path())
            .args(["serve", "--config", "cfg.txt"])
            .spawn()
            .unwrap(),
    );
    let mut ok = false;
    for _ in 0..100 {
        if ports
            .iter()
            .all(|p| std::net::TcpStream::connect(("127.0.0.1", *p)).is_ok())
        {
            ok = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    assert!(ok, "servers did not come up");
    let (code, out, err) = vipios(
        &dir,
        &[
            "script",
            "--config",
            "cfg.txt",
            "--file",
            "s.cmd",
            "--connect",
        ],
    );
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "0\n20000\n");
    let (code, out, err) = vipios(&dir, &["inspect", "--config", "cfg.txt", "--file", "kept"]);
    assert_eq!(code, 0, "{err}");
    assert!(
        out.contains("size 20000") && out.contains("stripe 4096"),
        "{out}"
    );
    let (code, _, err) = vipios(&dir, &["shutdown", "--config", "cfg.txt"]);
    assert_eq!(code, 0, "{err}");
    let status = server.0.wait().unwrap();
    assert!(status.success());
}
