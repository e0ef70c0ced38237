//! Hints and their encodings.
//!
//! A file administration hint travels inside OPEN and fixes the layout of a
//! newly created file. Prefetch and administration hints travel in HINT
//! messages. Binary layout: kind `u8` followed by the kind's fields.
//!
//! | kind | fields |
//! |---|---|
//! | 1 distribution | ints: count `u32`, `i64` each; owners: count `u32`, `u32` each (0 = default) |
//! | 2 access set | file size `u64`; count `u32`; per entry owner `u32`, disp `u64`, descriptor blob |
//! | 3 striped | stripe `u64` |
//! | 4 prefetch | count `u32`, names |
//! | 5 administration | server `u32`, flags `u8` (bit 0 best disk, bit 1 latency), best disk `u32`, latency in microseconds per MiB `u64` |

use serde::{Deserialize, Serialize};
use vipios_core::distribution::{parse_runtime_descriptor, DimSpec, DistKind, RuntimeDescriptor};
use vipios_core::protocol::params::{ParamError, Reader, Writer};
use vipios_core::viewdesc::AccessDesc;

#[derive(Debug, Clone, PartialEq)]
pub enum FileAdmin {
    /// Rank `r` of the distribution is stored on `owners[r]`, or on server
    /// `r mod n` without an owner list.
    Distribution {
        descriptor: RuntimeDescriptor,
        owners: Option<Vec<u32>>,
    },
    /// Each entry's view (from `disp`, one period) is stored on its owner.
    AccessSet {
        file_size: u64,
        entries: Vec<(u32, u64, AccessDesc)>,
    },
    /// Round-robin striping known to every server.
    Striped { stripe: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Hint {
    FileAdministration(FileAdmin),
    Prefetch(Vec<String>),
    Administration {
        server: u32,
        best_disk: Option<u32>,
        latency_ms_per_mib: Option<f64>,
    },
}

impl Hint {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Hint::FileAdministration(FileAdmin::Distribution { descriptor, owners }) => {
                let ints = descriptor.to_ints();
                let mut w = Writer::new().u8(1).u32(ints.len() as u32);
                for i in ints {
                    w = w.u64(i as u64);
                }
                let owners = owners.clone().unwrap_or_default();
                w = w.u32(owners.len() as u32);
                for o in owners {
                    w = w.u32(o);
                }
                w.finish()
            }
            Hint::FileAdministration(FileAdmin::AccessSet { file_size, entries }) => {
                let mut w = Writer::new()
                    .u8(2)
                    .u64(*file_size)
                    .u32(entries.len() as u32);
                for (owner, disp, desc) in entries {
                    w = w.u32(*owner).u64(*disp).bytes(&desc.encode());
                }
                w.finish()
            }
            Hint::FileAdministration(FileAdmin::Striped { stripe }) => {
                Writer::new().u8(3).u64(*stripe).finish()
            }
            Hint::Prefetch(names) => {
                let mut w = Writer::new().u8(4).u32(names.len() as u32);
                for n in names {
                    w = w.str(n);
                }
                w.finish()
            }
            Hint::Administration {
                server,
                best_disk,
                latency_ms_per_mib,
            } => {
                let flags =
                    u8::from(best_disk.is_some()) | (u8::from(latency_ms_per_mib.is_some()) << 1);
                Writer::new()
                    .u8(5)
                    .u32(*server)
                    .u8(flags)
                    .u32(best_disk.unwrap_or(0))
                    .u64(latency_ms_per_mib.map_or(0, |l| (l * 1000.0).round() as u64))
                    .finish()
            }
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Hint, ParamError> {
        let mut r = Reader::new(buf);
        Ok(match r.u8()? {
            1 => {
                let n = r.u32()? as usize;
                let mut ints = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    ints.push(r.u64()? as i64);
                }
                let descriptor = parse_runtime_descriptor(&ints).map_err(|_| ParamError)?;
                let k = r.u32()? as usize;
                let mut owners = Vec::with_capacity(k.min(1024));
                for _ in 0..k {
                    owners.push(r.u32()?);
                }
                Hint::FileAdministration(FileAdmin::Distribution {
                    descriptor,
                    owners: (!owners.is_empty()).then_some(owners),
                })
            }
            2 => {
                let file_size = r.u64()?;
                let n = r.u32()? as usize;
                let mut entries = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let owner = r.u32()?;
                    let disp = r.u64()?;
                    let (desc, _) = AccessDesc::decode(r.bytes()?).map_err(|_| ParamError)?;
                    entries.push((owner, disp, desc));
                }
                Hint::FileAdministration(FileAdmin::AccessSet { file_size, entries })
            }
            3 => Hint::FileAdministration(FileAdmin::Striped { stripe: r.u64()? }),
            4 => {
                let n = r.u32()? as usize;
                let mut names = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    names.push(r.str()?);
                }
                Hint::Prefetch(names)
            }
            5 => {
                let server = r.u32()?;
                let flags = r.u8()?;
                let disk = r.u32()?;
                let lat = r.u64()?;
                Hint::Administration {
                    server,
                    best_disk: (flags & 1 != 0).then_some(disk),
                    latency_ms_per_mib: (flags & 2 != 0).then_some(lat as f64 / 1000.0),
                }
            }
            _ => return Err(ParamError),
        })
    }
}

/// JSON form of a runtime descriptor:
///
/// ```json
/// {"grid": [3, 4], "elem_type": 4, "elem_size": 4,
///  "dims": [{"global": 14, "dist": "cyclic", "arg": 3},
///           {"global": 17, "local": 5, "dist": "block", "arg": 5}]}
/// ```
///
/// `local` is optional; `dist` is `none`, `block` or `cyclic`; `arg`
/// defaults to the global length for `none`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorJson {
    pub grid: Vec<u64>,
    pub elem_type: u32,
    pub elem_size: u64,
    pub dims: Vec<DimJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimJson {
    pub global: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<u64>,
    pub dist: String,
    #[serde(default)]
    pub arg: Option<u64>,
}

/// A runtime descriptor given either as the flat integer layout or as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DescriptorSpec {
    Flat(Vec<i64>),
    Json(DescriptorJson),
}

impl DescriptorSpec {
    pub fn resolve(&self) -> Result<RuntimeDescriptor, String> {
        let ints = match self {
            DescriptorSpec::Flat(v) => v.clone(),
            DescriptorSpec::Json(j) => {
                let dims = j
                    .dims
                    .iter()
                    .map(|d| {
                        let dist = match d.dist.as_str() {
                            "none" | "*" => DistKind::None,
                            "block" => DistKind::Block,
                            "cyclic" => DistKind::Cyclic,
                            "gen_block" => DistKind::GenBlock,
                            "indirect" => DistKind::Indirect,
                            o => return Err(format!("unknown distribution `{o}`")),
                        };
                        Ok(DimSpec {
                            global_len: d.global,
                            local_len: d.local,
                            dist,
                            arg: d.arg.unwrap_or(d.global),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                RuntimeDescriptor {
                    grid: j.grid.clone(),
                    elem_type_code: j.elem_type,
                    elem_size: j.elem_size,
                    dims,
                }
                .to_ints()
            }
        };
        parse_runtime_descriptor(&ints).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vipios_core::viewdesc::BasicBlock;

    #[test]
    fn hints_round_trip() {
        let rd = parse_runtime_descriptor(&[2, 3, 4, 4, 4, 2, 14, -1, 2, 3, 17, -1, 1, 5]).unwrap();
        let hints = vec![
            Hint::FileAdministration(FileAdmin::Distribution {
                descriptor: rd.clone(),
                owners: None,
            }),
            Hint::FileAdministration(FileAdmin::Distribution {
                descriptor: rd,
                owners: Some(vec![0, 1, 0]),
            }),
            Hint::FileAdministration(FileAdmin::AccessSet {
                file_size: 100,
                entries: vec![(1, 4, AccessDesc::new(vec![BasicBlock::leaf(0, 2, 5, 5)], 0))],
            }),
            Hint::FileAdministration(FileAdmin::Striped { stripe: 4096 }),
            Hint::Prefetch(vec!["a".into(), "b".into()]),
            Hint::Administration {
                server: 2,
                best_disk: Some(1),
                latency_ms_per_mib: Some(12.5),
            },
        ];
        for h in hints {
            assert_eq!(Hint::decode(&h.encode()).unwrap(), h);
        }
        assert!(Hint::decode(&[9]).is_err());
    }

    #[test]
    fn json_descriptor() {
        let j = r#"{"grid":[3,4],"elem_type":4,"elem_size":4,
            "dims":[{"global":14,"dist":"cyclic","arg":3},{"global":17,"dist":"block","arg":5}]}"#;
        let spec: DescriptorSpec = serde_json::from_str(j).unwrap();
        let flat: DescriptorSpec =
            serde_json::from_str("[2,3,4,4,4,2,14,-1,2,3,17,-1,1,5]").unwrap();
        assert_eq!(spec.resolve().unwrap(), flat.resolve().unwrap());
    }
}
