//! File formats: trajectory CSV and binary, domain and overlay CSVs, scan
//! tables, state literals and `key = value` configuration files.
//!
//! Binary layout (little endian): magic `KHEP`, version `u16`, record count
//! `u64`, then nine `f64` per record: `t, x, y, z, px, py, pz, H, J`.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use crate::dynamics::{conserved, PhaseState};
use crate::error::{KhepError, Result};
use crate::integrator::Trajectory;
use crate::search::ScanRow;
use crate::selfsim::{log_coords, FundamentalDomain};

pub const MAGIC: &[u8; 4] = b"KHEP";
pub const VERSION: u16 = 1;

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,px,py,pz,H,ptheta,J";

/// One row of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub state: PhaseState,
    pub h: f64,
    pub j: f64,
}

impl Record {
    pub fn new(t: f64, state: PhaseState) -> Self {
        let c = conserved(&state);
        Self {
            t,
            state,
            h: c.h,
            j: c.j,
        }
    }
}

pub fn records(traj: &Trajectory) -> Vec<Record> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| Record::new(*t, *s))
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[Record]) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        let s = &r.state;
        let ptheta = s.x * s.py - s.y * s.px;
        let cols = [r.t, s.x, s.y, s.z, s.px, s.py, s.pz, r.h, ptheta, r.j];
        let line: Vec<String> = cols.iter().map(|v| fmt(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| KhepError::Format(format!("line {line}: bad number {field:?}")))
}

/// Reads a trajectory CSV; `H` and `J` are taken from the file, `ptheta` is ignored.
pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(TRAJECTORY_HEADER) {
        return Err(KhepError::Format(format!(
            "expected header {TRAJECTORY_HEADER}"
        )));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(KhepError::Format(format!(
                "line {}: expected 10 columns",
                i + 2
            )));
        }
        let v: Vec<f64> = f
            .iter()
            .map(|s| parse_f64(s, i + 2))
            .collect::<Result<_>>()?;
        out.push(Record {
            t: v[0],
            state: PhaseState::new(v[1], v[2], v[3], v[4], v[5], v[6]),
            h: v[7],
            j: v[9],
        });
    }
    Ok(out)
}

pub fn write_trajectory_bin<W: Write>(mut w: W, rows: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for r in rows {
        let s = &r.state;
        for v in [r.t, s.x, s.y, s.z, s.px, s.py, s.pz, r.h, r.j] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_trajectory_bin<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(KhepError::Format("not a KHEP file".into()));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(KhepError::Format(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut out = Vec::new();
    for _ in 0..count {
        let mut v = [0.0; 9];
        for x in &mut v {
            r.read_exact(&mut b8)
                .map_err(|_| KhepError::Format("truncated record".into()))?;
            *x = f64::from_le_bytes(b8);
        }
        out.push(Record {
            t: v[0],
            state: PhaseState::new(v[1], v[2], v[3], v[4], v[5], v[6]),
            h: v[7],
            j: v[8],
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(KhepError::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

/// Domain segment with its logarithmic coordinates.
pub fn write_domain_csv<W: Write>(mut w: W, domain: &FundamentalDomain) -> Result<()> {
    writeln!(w, "t,x,y,z,px,py,pz,s,theta,u")?;
    for (t, st) in domain.times.iter().zip(&domain.states) {
        let lc = log_coords(st)?;
        let cols = [
            *t,
            st.x,
            st.y,
            st.z,
            st.px,
            st.py,
            st.pz,
            lc.s,
            lc.theta.unwrap_or(f64::NAN),
            lc.u,
        ];
        let line: Vec<String> = cols.iter().map(|v| fmt(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// One line of a direct-versus-reconstructed comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayRow {
    pub t: f64,
    /// Copy of the fundamental domain containing `t`.
    pub domain: i64,
    pub direct: PhaseState,
    pub rebuilt: PhaseState,
}

pub fn write_overlay_csv<W: Write>(mut w: W, rows: &[OverlayRow]) -> Result<()> {
    writeln!(w, "t,domain,x,y,z,rx,ry,rz,relative_error")?;
    for r in rows {
        let err = r.direct.distance(&r.rebuilt) / r.direct.norm();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt(r.t),
            r.domain,
            fmt(r.direct.x),
            fmt(r.direct.y),
            fmt(r.direct.z),
            fmt(r.rebuilt.x),
            fmt(r.rebuilt.y),
            fmt(r.rebuilt.z),
            fmt(err)
        )?;
    }
    Ok(())
}

/// Scan table: one row per grid point; empty cells where a step failed.
pub fn write_scan_csv<W: Write>(mut w: W, rows: &[ScanRow]) -> Result<()> {
    writeln!(w, "ptheta,seed_rotation,orbit_ptheta,rotation,j,k,error")?;
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for r in rows {
        let (rot, j, k) = match r.rotation {
            Some((j, k)) => (format!("{j}/{k}"), j.to_string(), k.to_string()),
            None => Default::default(),
        };
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt(r.ptheta),
            opt(r.seed_rotation),
            opt(r.orbit_ptheta),
            rot,
            j,
            k,
            err
        )?;
    }
    Ok(())
}

/// Parses `x,y,z,px,py,pz`.
pub fn parse_state(text: &str) -> Result<PhaseState> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| KhepError::InvalidArgument(format!("bad state component {s:?}")))
        })
        .collect::<Result<_>>()?;
    let a: [f64; 6] = v.try_into().map_err(|v: Vec<f64>| {
        KhepError::InvalidArgument(format!("a state has 6 components, got {}", v.len()))
    })?;
    Ok(PhaseState::from_array(a))
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(KhepError::Format(format!(
                "line {}: expected key = value",
                i + 1
            )));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(KhepError::Format(format!("line {}: empty key", i + 1)));
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}
