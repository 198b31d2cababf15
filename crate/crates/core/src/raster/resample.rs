//! Grid resampling with pixel-centre alignment.
//!
//! Output pixel `i` maps to the continuous source coordinate
//! `(i + 0.5) * src / dst - 0.5`, i.e. outer pixel edges of both grids
//! coincide (align-corners = false).

use rayon::prelude::*;

use super::{DType, Grid, Pixel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bilinear,
    Nearest,
}

#[inline]
pub(crate) fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

/// Bilinear sample at continuous pixel-centre coordinates, clamped to the edge.
#[inline]
pub(crate) fn sample_bilinear<T: Pixel>(grid: &Grid<T>, x: f64, y: f64) -> f64 {
    let (w, h) = grid.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = grid.get(x0, y0).to_f64() * (1.0 - fx) + grid.get(x1, y0).to_f64() * fx;
    let bottom = grid.get(x0, y1).to_f64() * (1.0 - fx) + grid.get(x1, y1).to_f64() * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Nearest sample at continuous pixel-centre coordinates, clamped to the edge.
#[inline]
pub(crate) fn sample_nearest<T: Pixel>(grid: &Grid<T>, x: f64, y: f64) -> T {
    let (w, h) = grid.dims();
    let xi = (x + 0.5).floor().clamp(0.0, (w - 1) as f64) as usize;
    let yi = (y + 0.5).floor().clamp(0.0, (h - 1) as f64) as usize;
    grid.get(xi, yi)
}

/// Resamples `grid` to `new_width × new_height`.
///
/// Masks only support [`Method::Nearest`]; bilinear on a mask is an
/// invalid-argument error.
pub fn resample<T: Pixel>(
    grid: &Grid<T>,
    new_width: usize,
    new_height: usize,
    method: Method,
) -> Result<Grid<T>> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resample target {new_width}x{new_height} must be at least 1x1"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot resample an empty grid".into(),
        ));
    }
    if method == Method::Bilinear && T::DTYPE == DType::Mask {
        return Err(Error::InvalidArgument(
            "bilinear resampling is not defined for masks; use nearest".into(),
        ));
    }
    if grid.dims() == (new_width, new_height) {
        return Ok(grid.clone());
    }
    let (w, h) = grid.dims();
    let xs: Vec<f64> = (0..new_width)
        .map(|i| source_coord(i, w, new_width))
        .collect();
    let data: Vec<T> = (0..new_height)
        .into_par_iter()
        .flat_map_iter(|j| {
            let sy = source_coord(j, h, new_height);
            let xs = &xs;
            xs.iter().map(move |&sx| match method {
                Method::Bilinear => T::from_f64(sample_bilinear(grid, sx, sy)),
                Method::Nearest => {
                    // Nearest pixel centre: floor of the continuous edge coordinate.
                    let xi = (((sx + 0.5).floor()) as usize).min(w - 1);
                    let yi = (((sy + 0.5).floor()) as usize).min(h - 1);
                    grid.get(xi, yi)
                }
            })
        })
        .collect();
    Grid::new(new_width, new_height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent scalar linear interpolation between pixel centres.
    fn lerp_oracle(values: &[f64], pos: f64) -> f64 {
        let n = values.len();
        if pos <= 0.0 {
            return values[0];
        }
        if pos >= (n - 1) as f64 {
            return values[n - 1];
        }
        let i = pos as usize;
        let t = pos - i as f64;
        values[i] + t * (values[i + 1] - values[i])
    }

    #[test]
    fn bilinear_two_to_three() {
        let g = Grid::new(2, 1, vec![0.0f32, 10.0]).unwrap();
        let r = resample(&g, 3, 1, Method::Bilinear).unwrap();
        let expect: Vec<f32> = (0..3)
            .map(|i| lerp_oracle(&[0.0, 10.0], (i as f64 + 0.5) * 2.0 / 3.0 - 0.5) as f32)
            .collect();
        assert_eq!(expect, vec![0.0, 5.0, 10.0]);
        assert_eq!(r.data(), expect.as_slice());
    }

    #[test]
    fn bilinear_matches_scalar_oracle_on_rows() {
        let vals = [3.0f64, -1.0, 7.5, 2.0, 0.0];
        let g = Grid::new(5, 1, vals.iter().map(|&v| v as f32).collect()).unwrap();
        let r = resample(&g, 13, 1, Method::Bilinear).unwrap();
        for i in 0..13 {
            let want = lerp_oracle(&vals, (i as f64 + 0.5) * 5.0 / 13.0 - 0.5);
            assert!((r.get(i, 0) as f64 - want).abs() < 1e-5, "i={i}");
        }
    }

    #[test]
    fn nearest_block_replication() {
        let m = Grid::new(2, 2, vec![true, false, false, false]).unwrap();
        let r = resample(&m, 4, 4, Method::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(r.get(x, y), x < 2 && y < 2, "({x},{y})");
            }
        }
    }

    #[test]
    fn bilinear_on_mask_is_rejected() {
        let m = Grid::filled(2, 2, false);
        assert!(matches!(
            resample(&m, 3, 3, Method::Bilinear),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_target_is_rejected() {
        let g = Grid::filled(2, 2, 1u8);
        assert!(resample(&g, 0, 3, Method::Nearest).is_err());
    }

    #[test]
    fn sample_helpers_clamp() {
        let g = Grid::new(2, 1, vec![0.0f32, 10.0]).unwrap();
        assert_eq!(sample_bilinear(&g, -3.0, 0.0), 0.0);
        assert_eq!(sample_bilinear(&g, 0.25, 0.0), 2.5);
        assert_eq!(sample_nearest(&g, 0.6, 0.0), 10.0);
    }

    proptest! {
        #[test]
        fn identity_for_both_methods(w in 1usize..12, h in 1usize..12, seed in any::<u32>()) {
            let g = Grid::from_fn(w, h, |x, y| ((x * 31 + y * 17) as u32 ^ seed) as f32 * 0.25);
            prop_assert!(resample(&g, w, h, Method::Bilinear).unwrap().bitwise_eq(&g));
            prop_assert!(resample(&g, w, h, Method::Nearest).unwrap().bitwise_eq(&g));
        }

        #[test]
        fn bilinear_range_is_bounded(
            vals in proptest::collection::vec(-1000.0f32..1000.0, 16),
            nw in 1usize..20,
            nh in 1usize..20,
        ) {
            let g = Grid::new(4, 4, vals.clone()).unwrap();
            let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let r = resample(&g, nw, nh, Method::Bilinear).unwrap();
            for &v in r.data() {
                prop_assert!(v >= lo && v <= hi);
            }
        }

        #[test]
        fn nearest_masks_stay_boolean_and_subset(
            bits in proptest::collection::vec(any::<bool>(), 12),
            nw in 1usize..30,
            nh in 1usize..30,
        ) {
            let m = Grid::new(4, 3, bits).unwrap();
            let r = resample(&m, nw, nh, Method::Nearest).unwrap();
            if m.count_ones() == 0 {
                prop_assert_eq!(r.count_ones(), 0);
            }
        }
    }
}
