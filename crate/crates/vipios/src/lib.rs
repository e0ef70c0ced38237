//! Runtime for the parallel I/O system: servers, the client library, an
//! in-process cluster, the benchmark harness and the regression suites.

pub mod bench;
pub mod client;
pub mod cluster;
pub mod config;
pub mod hints;
pub mod regress;
pub mod script;
pub mod server;
pub mod transport;

/// Access mode flags of OPEN.
pub mod amode {
    use vipios_core::protocol::Status;

    pub const RDONLY: u32 = 1;
    pub const WRONLY: u32 = 2;
    pub const RDWR: u32 = 4;
    pub const CREATE: u32 = 8;
    pub const EXCL: u32 = 16;
    pub const DELETE_ON_CLOSE: u32 = 32;
    pub const APPEND: u32 = 64;

    const ACCESS: u32 = RDONLY | WRONLY | RDWR;
    const KNOWN: u32 = 127;

    /// Exactly one access mode; read-only excludes create and exclusive.
    pub fn check(flags: u32) -> Result<(), Status> {
        if flags & !KNOWN != 0 || (flags & ACCESS).count_ones() != 1 {
            return Err(Status::ModeConflict);
        }
        if flags & RDONLY != 0 && flags & (CREATE | EXCL) != 0 {
            return Err(Status::ModeConflict);
        }
        Ok(())
    }

    pub fn readable(flags: u32) -> bool {
        flags & (RDONLY | RDWR) != 0
    }

    pub fn writable(flags: u32) -> bool {
        flags & (WRONLY | RDWR) != 0
    }

    /// Parses `rdonly|create` style names.
    pub fn parse(text: &str) -> Option<u32> {
        let mut f = 0;
        for w in text.split(['|', ',', ' ']).filter(|w| !w.is_empty()) {
            f |= match w.to_ascii_lowercase().as_str() {
                "rdonly" => RDONLY,
                "wronly" => WRONLY,
                "rdwr" => RDWR,
                "create" => CREATE,
                "excl" => EXCL,
                "delete_on_close" => DELETE_ON_CLOSE,
                "append" => APPEND,
                _ => return None,
            };
        }
        Some(f)
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn mode_checks() {
            assert!(check(RDONLY).is_ok());
            assert!(check(RDWR | CREATE | EXCL).is_ok());
            assert_eq!(check(0), Err(Status::ModeConflict));
            assert_eq!(check(RDONLY | RDWR), Err(Status::ModeConflict));
            assert_eq!(check(RDONLY | CREATE), Err(Status::ModeConflict));
            assert_eq!(check(RDONLY | EXCL), Err(Status::ModeConflict));
            assert_eq!(check(WRONLY | 128), Err(Status::ModeConflict));
            assert_eq!(parse("rdwr|create"), Some(RDWR | CREATE));
            assert_eq!(parse("bogus"), None);
        }
    }
}
