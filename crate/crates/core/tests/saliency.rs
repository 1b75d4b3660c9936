mod common;

use common::criteria::eye_tracking;
use cyborg::grid::{CropBox, Grid};
use cyborg::saliency::{
    align_heatmap, average_annotations, fixation_density, fixations_to_heatmap, EyetrackConfig,
    Fixation, SaliencyMap, SaliencySource,
};
use proptest::prelude::*;

#[test]
fn eye_tracking_construction() {
    eye_tracking().unwrap();
}

fn binary_mask(w: usize, h: usize) -> impl Strategy<Value = Grid> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |v| {
        Grid::new(w, h, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap()
    })
}

fn fixation(w: usize, h: usize) -> impl Strategy<Value = Fixation> {
    (0.0..w as f64, 0.0..h as f64, 150.0..800.0f64).prop_map(|(x, y, d)| Fixation {
        x,
        y,
        duration_ms: d,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn averaging_is_permutation_invariant_and_bounded(
        masks in prop::collection::vec(binary_mask(6, 5), 1..6),
        rot in 0usize..6,
    ) {
        let avg = average_annotations(&masks).unwrap();
        let mut rotated = masks.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        prop_assert_eq!(&average_annotations(&rotated).unwrap(), &avg);
        for i in 0..avg.values().len() {
            let px: Vec<f64> = masks.iter().map(|m| m.as_slice()[i]).collect();
            let lo = px.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = avg.values().as_slice()[i];
            prop_assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn fixation_density_is_additive(
        a in prop::collection::vec(fixation(20, 16), 1..5),
        b in prop::collection::vec(fixation(20, 16), 1..5),
        sigma in 0.5..4.0f64,
    ) {
        let cfg = EyetrackConfig::new(sigma).unwrap();
        let da = fixation_density(&a, 20, 16, &cfg).unwrap();
        let db = fixation_density(&b, 20, 16, &cfg).unwrap();
        let both: Vec<Fixation> = a.iter().chain(&b).copied().collect();
        let d = fixation_density(&both, 20, 16, &cfg).unwrap();
        for i in 0..d.len() {
            let sum = da.as_slice()[i] + db.as_slice()[i];
            prop_assert!((d.as_slice()[i] - sum).abs() <= 1e-9 * sum.max(1.0));
        }
        let map = fixations_to_heatmap(&both, 20, 16, &cfg).unwrap();
        prop_assert_eq!(map.values().max(), 1.0);
    }

    #[test]
    fn alignment_preserves_bounds(
        values in prop::collection::vec(0.0..=1.0f64, 12 * 10),
        x in 0usize..6, y in 0usize..5, w in 1usize..7, h in 1usize..6,
        tw in 1usize..20, th in 1usize..20,
    ) {
        let map = SaliencyMap::new(Grid::new(12, 10, values).unwrap(), SaliencySource::Annotation).unwrap();
        let crop = CropBox { x, y, width: w, height: h };
        let out = align_heatmap(&map, &crop, tw, th).unwrap();
        prop_assert_eq!(out.values().dims(), (tw, th));
        prop_assert!(out.values().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
