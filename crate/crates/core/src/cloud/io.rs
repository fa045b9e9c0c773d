//! ASCII XYZ (`x y z return_number`) and binary little-endian PLY.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{CloudError, PointCloud};

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ply header: {0}")]
    Header(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Return numbers default to 1 when the cloud carries none.
pub fn write_xyz<W: Write>(cloud: &PointCloud, mut out: W) -> std::io::Result<()> {
    for (i, p) in cloud.points.iter().enumerate() {
        let r = cloud.return_number.as_ref().map_or(1, |r| r[i]);
        writeln!(out, "{} {} {} {}", p[0], p[1], p[2], r)?;
    }
    Ok(())
}

/// Accepts 3 or 4 columns; blank lines and `#` comments are skipped.
pub fn read_xyz<R: BufRead>(input: R) -> Result<PointCloud, CloudIoError> {
    let mut points = Vec::new();
    let mut returns = Vec::new();
    let mut all_have_returns = true;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = t.split_whitespace().collect();
        let err = |msg: String| CloudIoError::Parse { line: n + 1, msg };
        if cols.len() != 3 && cols.len() != 4 {
            return Err(err(format!("expected 3 or 4 columns, got {}", cols.len())));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = cols[k]
                .parse()
                .map_err(|_| err(format!("bad coordinate {:?}", cols[k])))?;
        }
        points.push(p);
        match cols.get(3) {
            Some(r) => returns.push(r.parse::<u8>().map_err(|_| err(format!("bad return number {r:?}")))?),
            None => all_have_returns = false,
        }
    }
    let cloud = if all_have_returns && !points.is_empty() {
        PointCloud::with_returns(points, returns)?
    } else {
        PointCloud::new(points)?
    };
    Ok(cloud)
}

pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar return_number\nend_header\n",
        cloud.len()
    )?;
    let mut buf = Vec::with_capacity(cloud.len() * 25);
    for (i, p) in cloud.points.iter().enumerate() {
        for c in p {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf.push(cloud.return_number.as_ref().map_or(1, |r| r[i]));
    }
    out.write_all(&buf)
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String, CloudIoError> {
    let mut s = String::new();
    if input.read_line(&mut s)? == 0 {
        return Err(CloudIoError::Header("unexpected end of header".into()));
    }
    Ok(s.trim_end().to_string())
}

/// Reads exactly the layout produced by [`write_ply`].
pub fn read_ply<R: BufRead>(mut input: R) -> Result<PointCloud, CloudIoError> {
    let expect = |got: String, want: &str| {
        if got == want {
            Ok(())
        } else {
            Err(CloudIoError::Header(format!("expected {want:?}, got {got:?}")))
        }
    };
    expect(read_line(&mut input)?, "ply")?;
    expect(read_line(&mut input)?, "format binary_little_endian 1.0")?;
    let count_line = read_line(&mut input)?;
    let count: usize = count_line
        .strip_prefix("element vertex ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CloudIoError::Header(format!("bad element line {count_line:?}")))?;
    for want in [
        "property double x",
        "property double y",
        "property double z",
        "property uchar return_number",
        "end_header",
    ] {
        expect(read_line(&mut input)?, want)?;
    }
    let mut body = vec![0u8; count * 25];
    input.read_exact(&mut body)?;
    let mut points = Vec::with_capacity(count);
    let mut returns = Vec::with_capacity(count);
    for rec in body.chunks_exact(25) {
        let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        points.push([f(0), f(1), f(2)]);
        returns.push(rec[24]);
    }
    Ok(PointCloud::with_returns(points, returns)?)
}
