//! Wavefront OBJ subset: `v x y z` and triangular `f a b c` records (1-based).

use std::io::{BufRead, Write};

use nalgebra::Point3;
use thiserror::Error;

use super::{MeshError, TriangleMesh};

#[derive(Debug, Error)]
pub enum ObjError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Coordinates use Rust's shortest round-trip formatting, so reading back is exact.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, mut out: W) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

fn parse_index(tok: &str, line: usize) -> Result<u32, ObjError> {
    // accept "7", "7/2" and "7/2/5"
    let head = tok.split('/').next().unwrap_or(tok);
    let i: u32 = head.parse().map_err(|_| ObjError::Parse {
        line,
        msg: format!("bad face index {tok:?}"),
    })?;
    if i == 0 {
        return Err(ObjError::Parse {
            line,
            msg: "face indices are 1-based".into(),
        });
    }
    Ok(i - 1)
}

pub fn read_obj<R: BufRead>(input: R) -> Result<TriangleMesh, ObjError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ObjError::Parse {
                        line: lineno,
                        msg: format!("bad vertex: {e}"),
                    })?;
                if c.len() != 3 {
                    return Err(ObjError::Parse {
                        line: lineno,
                        msg: "vertex needs 3 coordinates".into(),
                    });
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks.map(|t| parse_index(t, lineno)).collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(ObjError::Parse {
                        line: lineno,
                        msg: format!("only triangles are supported, got {} indices", idx.len()),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::cylinder;

    #[test]
    fn round_trip_is_exact() {
        let m = cylinder(0.37, 1.9, 11)
            .transform(33.0, nalgebra::Vector3::new(1.5, -2.25, 0.1), 1.3)
            .unwrap();
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        let back = read_obj(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_quads_and_zero_index() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n";
        assert!(matches!(read_obj(src.as_bytes()), Err(ObjError::Parse { line: 5, .. })));
        let src = "v 0 0 0\nf 0 1 2\n";
        assert!(read_obj(src.as_bytes()).is_err());
    }
}
