use chladni_core::physics::*;
use proptest::prelude::*;

/// Union-find labelling, independent of the BFS used by the library.
fn union_find_components(res: usize, cells: &[bool]) -> usize {
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..cells.len()).collect();
    for r in 0..res {
        for c in 0..res {
            if !cells[r * res + c] {
                continue;
            }
            // Previously visited neighbours only: W, NW, N, NE.
            let mut neighbours = vec![];
            if c > 0 {
                neighbours.push(r * res + c - 1);
            }
            if r > 0 {
                neighbours.push((r - 1) * res + c);
                if c > 0 {
                    neighbours.push((r - 1) * res + c - 1);
                }
                if c + 1 < res {
                    neighbours.push((r - 1) * res + c + 1);
                }
            }
            for nb in neighbours {
                if cells[nb] {
                    let (a, b) = (find(&mut parent, r * res + c), find(&mut parent, nb));
                    parent[a] = b;
                }
            }
        }
    }
    (0..cells.len()).filter(|&i| cells[i] && find(&mut parent, i) == i).count()
}

#[test]
fn undamped_mode_one_two_golden_line_count() {
    let order = ModeOrder::new(1, 2).unwrap();
    let field = amplitude_field(order, 128, DecayParams::NONE).unwrap();
    let mask = nodal_mask(&field, 0.15, PlateSpec::default().center_exclusion_radius()).unwrap();
    assert_eq!(mask.true_count(), 2440);
    assert_eq!(union_find_components(128, mask.cells()), 5);
    assert_eq!(nodal_line_count(&mask), 5);
}

#[test]
fn counted_components_match_union_find_for_every_registry_mode() {
    for (n, m) in [(1, 2), (3, 5), (1, 6), (2, 6), (3, 6), (4, 5), (5, 6)] {
        let mask = NodalSettings::default().mask(ModeOrder::new(n, m).unwrap(), 96).unwrap();
        assert_eq!(nodal_line_count(&mask), union_find_components(96, mask.cells()), "({n}, {m})");
    }
}

#[test]
fn ramp_field_marks_exactly_the_smallest_values() {
    let values: Vec<f64> = (1..=4096).map(f64::from).collect();
    let field = FieldGrid::from_values(64, values.clone()).unwrap();
    let mask = nodal_mask(&field, 0.15, 0.0).unwrap();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[(0.15f64 * 4096.0).floor() as usize - 1];
    for (i, v) in values.iter().enumerate() {
        assert_eq!(mask.cells()[i], *v <= cutoff, "cell {i}");
    }
    assert_eq!(mask.true_count(), 614);
}

#[test]
fn exclusion_disk_is_always_false() {
    let radius = PlateSpec::default().center_exclusion_radius();
    for res in [64, 128, 256] {
        let mask = NodalSettings::default().mask(ModeOrder::new(1, 2).unwrap(), res).unwrap();
        for r in 0..res {
            for c in 0..res {
                let (x, y) = (cell_center(c, res), cell_center(r, res));
                if x.hypot(y) < radius {
                    assert!(!mask.get(r, c));
                }
            }
        }
    }
}

#[test]
fn center_value_is_negligible() {
    for (n, m) in [(1, 2), (3, 5), (2, 6)] {
        let f = amplitude_field(ModeOrder::new(n, m).unwrap(), 65, DecayParams::default()).unwrap();
        assert!(f.get(32, 32).abs() < 1e-6);
    }
}

fn order_strategy() -> impl Strategy<Value = ModeOrder> {
    (1u32..8, 1u32..8).prop_filter("n != m", |(n, m)| n != m).prop_map(|(n, m)| ModeOrder::new(n, m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn field_is_antisymmetric_and_normalised(
        order in order_strategy(),
        res in 16usize..72,
        alpha in 0.0f64..2.0,
        gamma in 0.0f64..2.0,
    ) {
        let f = amplitude_field(order, res, DecayParams { central_decay: alpha, edge_damping: gamma }).unwrap();
        let peak = f.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert_eq!(peak, 1.0);
        for i in 0..res {
            for j in 0..res {
                prop_assert!((f.get(i, j) + f.get(j, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn order_swap_negates_shape(order in order_strategy(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        prop_assert_eq!(mode_shape(order.swapped(), x, y), -mode_shape(order, x, y));
    }

    #[test]
    fn frequency_strictly_increasing(l1 in 0.0f64..500.0, dl in 1e-6f64..50.0) {
        let spec = PlateSpec::default();
        prop_assert!(natural_frequency(&spec, l1 + dl).unwrap() > natural_frequency(&spec, l1).unwrap());
    }

    #[test]
    fn doubling_thickness_scales_d_by_eight_and_f_by_two(h in 1e-4f64..5e-3, lambda in 1.0f64..200.0) {
        let thin = PlateSpec { thickness: h, ..PlateSpec::default() };
        let thick = PlateSpec { thickness: 2.0 * h, ..PlateSpec::default() };
        let d_ratio = bending_stiffness(&thick) / bending_stiffness(&thin);
        prop_assert!((d_ratio / 8.0 - 1.0).abs() < 1e-9);
        let f_ratio = natural_frequency(&thick, lambda).unwrap() / natural_frequency(&thin, lambda).unwrap();
        prop_assert!((f_ratio / 2.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_fraction_bounded_by_quantile(
        order in order_strategy(),
        res in 16usize..96,
        q in 0.02f64..0.6,
    ) {
        let f = amplitude_field(order, res, DecayParams::default()).unwrap();
        let mask = nodal_mask(&f, q, 0.0375).unwrap();
        let frac = mask.true_count() as f64 / (res * res) as f64;
        prop_assert!(frac <= q + 2.0 / (res * res) as f64);
    }
}
