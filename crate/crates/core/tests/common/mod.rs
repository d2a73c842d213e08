//! Brute-force metric oracles shared by the integration tests.

pub fn brute_dice(a: &[u8], b: &[u8]) -> f64 {
    let labels: std::collections::BTreeSet<u8> = a.iter().chain(b).copied().filter(|&l| l != 0).collect();
    if labels.is_empty() {
        return 1.0;
    }
    let mut sum = 0.0;
    for &l in &labels {
        let na = a.iter().filter(|&&v| v == l).count();
        let nb = b.iter().filter(|&&v| v == l).count();
        let both = a.iter().zip(b).filter(|(&x, &y)| x == l && y == l).count();
        sum += 2.0 * both as f64 / (na + nb) as f64;
    }
    sum / labels.len() as f64
}

/// Pixels of `label` with a 4-neighbour that is not `label` or lies off the grid.
pub fn brute_boundary(m: &[u8], h: usize, w: usize, label: u8) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if m[(y * w as i64 + x) as usize] != label {
                continue;
            }
            let edge = [(0, 1), (0, -1), (1, 0), (-1, 0)].iter().any(|(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 || m[(ny * w as i64 + nx) as usize] != label
            });
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

pub fn brute_hd(a: &[u8], b: &[u8], h: usize, w: usize, label: u8) -> f64 {
    let (ba, bb) = (brute_boundary(a, h, w, label), brute_boundary(b, h, w, label));
    let directed = |p: &[(i64, i64)], q: &[(i64, i64)]| {
        p.iter()
            .map(|&(y, x)| {
                q.iter()
                    .map(|&(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&ba, &bb).max(directed(&bb, &ba))
}

/// Quadratic displacement; central differences are exact for it.
pub struct Quadratic {
    pub c: [f64; 12],
}

impl Quadratic {
    pub fn u(&self, x: f64, y: f64) -> (f64, f64) {
        let c = &self.c;
        (
            c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y,
            c[6] + c[7] * x + c[8] * y + c[9] * x * x + c[10] * x * y + c[11] * y * y,
        )
    }

    pub fn det(&self, x: f64, y: f64) -> f64 {
        let c = &self.c;
        let (a, b) = (1.0 + c[1] + 2.0 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2.0 * c[5] * y);
        let (d, e) = (c[7] + 2.0 * c[9] * x + c[10] * y, 1.0 + c[8] + c[10] * x + 2.0 * c[11] * y);
        a * e - b * d
    }
}

