mod oracles;

use proptest::prelude::*;
use tta_seg::boundary::{hard_boundary, sobel_magnitude, soft_boundary};
use tta_seg::imaging::ClassMask;
use tta_seg::Grid;

fn one_channel(h: usize, w: usize, data: Vec<u8>) -> ClassMask {
    ClassMask::new(Grid::new(1, h, w, data).unwrap()).unwrap()
}

// Shapes are at least two pixels thick: the kernels' zero centre tap leaves
// a one-pixel line without response along its own axis.
fn rect_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (4usize..24, 4usize..24).prop_flat_map(|(h, w)| {
        (0..h - 2, 0..w - 2).prop_flat_map(move |(t, l)| {
            (t + 2..=h, l + 2..=w).prop_map(move |(b, r)| (h, w, oracles::rectangle(h, w, t, l, b, r)))
        })
    })
}

fn ellipse_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (8usize..28, 8usize..28, 2.0f64..8.0, 2.0f64..8.0, 0.0f64..std::f64::consts::PI).prop_flat_map(
        |(h, w, ry, rx, angle)| {
            (0.0..h as f64, 0.0..w as f64)
                .prop_map(move |(cy, cx)| (h, w, oracles::ellipse(h, w, cy, cx, ry, rx, angle)))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rectangles_match_neighbourhood_oracle((h, w, m) in rect_strategy()) {
        let got = hard_boundary(&one_channel(h, w, m.clone()));
        prop_assert_eq!(got.channel(0), &oracles::boundary(&m, h, w)[..]);
    }

    #[test]
    fn ellipses_match_neighbourhood_oracle((h, w, m) in ellipse_strategy()) {
        let got = hard_boundary(&one_channel(h, w, m.clone()));
        prop_assert_eq!(got.channel(0), &oracles::boundary(&m, h, w)[..]);
    }

    #[test]
    fn boundary_is_complement_symmetric((h, w, m) in ellipse_strategy()) {
        let inv: Vec<u8> = m.iter().map(|&v| 1 - v).collect();
        prop_assert_eq!(
            hard_boundary(&one_channel(h, w, m)),
            hard_boundary(&one_channel(h, w, inv))
        );
    }

    #[test]
    fn magnitude_matches_direct_correlation(
        h in 3usize..10,
        w in 3usize..10,
        seed in prop::collection::vec(0.0f64..1.0, 100),
    ) {
        let field: Vec<f64> = seed[..h * w].to_vec();
        let grid = Grid::new(1, h, w, field.clone()).unwrap();
        let got = sobel_magnitude(&grid);
        let gx = oracles::correlate(&field, h, w, oracles::SOBEL_X);
        let gy = oracles::correlate(&field, h, w, oracles::SOBEL_Y);
        for i in 0..h * w {
            let want = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            prop_assert!((got.as_slice()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn thresholded_soft_boundary_equals_hard_boundary(
        (h, w, m) in ellipse_strategy(),
        tau in 0.001f64..=0.25,
    ) {
        // A binary field's weakest nonzero response is a single corner tap,
        // 1/4 after normalisation; above that threshold the two can differ.
        let soft = soft_boundary(&Grid::new(1, h, w, m.iter().map(|&v| f64::from(v)).collect()).unwrap());
        let hard = hard_boundary(&one_channel(h, w, m));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                prop_assert_eq!(u8::from(soft.as_slice()[i] >= tau), hard.channel(0)[i]);
            }
        }
    }

}

#[test]
fn impulse_response_is_the_kernel_pattern() {
    let (h, w) = (7, 7);
    let mut field = vec![0.0; h * w];
    field[3 * w + 3] = 1.0;
    let got = sobel_magnitude(&Grid::new(1, h, w, field.clone()).unwrap());
    let gx = oracles::correlate(&field, h, w, oracles::SOBEL_X);
    let gy = oracles::correlate(&field, h, w, oracles::SOBEL_Y);
    for dy in 0..3 {
        for dx in 0..3 {
            let i = (2 + dy) * w + 2 + dx;
            assert_eq!(got.as_slice()[i], (gx[i].powi(2) + gy[i].powi(2)).sqrt());
        }
    }
    // Centre has no response; edge neighbours get 2, corners sqrt(2).
    assert_eq!(got.get(0, 3, 3), 0.0);
    assert_eq!(got.get(0, 2, 3), 2.0);
    assert_eq!(got.get(0, 2, 2), 2f64.sqrt());
}

#[test]
fn unit_step_edge_is_exactly_one() {
    let (h, w, k) = (9, 10, 5);
    let field: Vec<f64> = (0..h * w).map(|i| f64::from(u8::from(i % w >= k))).collect();
    let soft = soft_boundary(&Grid::new(1, h, w, field).unwrap());
    for y in 0..h {
        for x in 0..w {
            let want = if x == k - 1 || x == k { 1.0 } else { 0.0 };
            assert_eq!(soft.get(0, y, x), want, "({y}, {x})");
        }
    }
}

#[test]
fn square_boundary_is_two_rings() {
    let (h, w) = (12, 12);
    let square = oracles::rectangle(h, w, 3, 3, 9, 9);
    let b = hard_boundary(&one_channel(h, w, square));
    let ring = |lo: usize, hi: usize| {
        oracles::rectangle(h, w, lo, lo, hi, hi)
            .iter()
            .zip(oracles::rectangle(h, w, lo + 1, lo + 1, hi - 1, hi - 1))
            .map(|(a, b)| a - b)
            .collect::<Vec<u8>>()
    };
    let want: Vec<u8> = ring(2, 10).iter().zip(ring(3, 9)).map(|(a, b)| a + b).collect();
    assert_eq!(b.channel(0), &want[..]);
}
