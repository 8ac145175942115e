use ndarray::Array2;

/// Inner boundary of a mask at head resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryTarget {
    pub grid: Array2<bool>,
}

impl BoundaryTarget {
    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&v| v).count()
    }

    pub fn as_real(&self) -> Array2<f64> {
        self.grid.mapv(|v| if v { 1.0 } else { 0.0 })
    }
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Binarize `mask` at `threshold` (value >= threshold is foreground) and mark
/// foreground pixels with a background 4-neighbor. Pixels beyond the grid
/// count as background. The ring is then grown `width - 1` times, staying
/// inside the foreground.
pub fn extract_boundary(mask: &Array2<f64>, threshold: f64, width: usize) -> BoundaryTarget {
    let width = width.max(1);
    let (h, w) = mask.dim();
    let fg = mask.mapv(|v| v >= threshold);
    let is_fg = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && fg[[r as usize, c as usize]]
    };

    let mut grid = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            if !fg[[r, c]] {
                continue;
            }
            grid[[r, c]] = NEIGHBORS
                .iter()
                .any(|&(dr, dc)| !is_fg(r as isize + dr, c as isize + dc));
        }
    }

    for _ in 1..width {
        let prev = grid.clone();
        for r in 0..h {
            for c in 0..w {
                if !fg[[r, c]] || prev[[r, c]] {
                    continue;
                }
                grid[[r, c]] = NEIGHBORS.iter().any(|&(dr, dc)| {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && prev[[rr as usize, cc as usize]]
                });
            }
        }
    }
    BoundaryTarget { grid }
}
