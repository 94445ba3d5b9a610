use proptest::prelude::*;
use sramyield::analytics::{
    access_fail_prob_ber, access_fail_prob_fixed, invert_write, write_fail_prob, AccessRow, AccessTable,
    DeltaVDistribution, OffsetVoltageDist, WriteTimeDistribution,
};
use sramyield::characterize::{characterize_access, default_access_grid, Characterization};
use sramyield::mc::{OracleMode, VariationSpec};
use sramyield::oracle::{Cell, CellConfig};

fn delta_dist() -> impl Strategy<Value = DeltaVDistribution> {
    (0.05f64..0.6, 0.05f64..0.5).prop_map(|(mu, ratio)| DeltaVDistribution::new(mu, mu * ratio).unwrap())
}

fn write_dist() -> impl Strategy<Value = WriteTimeDistribution> {
    (0.5f64..4.0, 0.02f64..0.3, -30.0f64..-20.0)
        .prop_map(|(mu, ratio, lt0)| WriteTimeDistribution::new(mu, mu * ratio, lt0.exp()).unwrap())
}

fn nondecreasing_in_unit_interval(values: &[f64]) -> bool {
    values.iter().all(|v| (0.0..=1.0).contains(v)) && values.windows(2).all(|w| w[1] >= w[0])
}

proptest! {
    #[test]
    fn delta_cdf_is_a_cdf(d in delta_dist()) {
        let hi = 4.0 * (d.mu_delta + 8.0 * d.sigma_delta).powi(2);
        let grid: Vec<f64> = (0..1000).map(|k| -0.01 + (hi + 0.01) * k as f64 / 999.0).collect();
        let values: Vec<f64> = grid.iter().map(|&v| d.cdf(v)).collect();
        prop_assert!(nondecreasing_in_unit_interval(&values));
        prop_assert_eq!(d.cdf(-1.0), 0.0);
        prop_assert!(d.cdf(hi) > 1.0 - 1e-12);
        // right-continuous at the atom
        prop_assert!((d.cdf(1e-300) - d.zero_atom()).abs() < 1e-12);
    }

    #[test]
    fn write_cdf_is_a_cdf(d in write_dist()) {
        let hi = d.quantile(1.0 - 1e-12);
        let grid: Vec<f64> = (0..1000).map(|k| 0.5 * d.t0 + (hi - 0.5 * d.t0) * k as f64 / 999.0).collect();
        let values: Vec<f64> = grid.iter().map(|&t| d.cdf(t)).collect();
        prop_assert!(nondecreasing_in_unit_interval(&values));
        prop_assert_eq!(d.cdf(0.9 * d.t0), 0.0);
        prop_assert!((d.cdf(d.t0) - d.floor_atom()).abs() < 1e-15);
    }

    #[test]
    fn fixed_offset_failure_ordering(mu in 0.1f64..0.5, sigma in 0.01f64..0.05, v_frac in 0.05f64..0.95, bump in 1.001f64..1.5) {
        let v_os = v_frac * mu * mu;
        let base = DeltaVDistribution::new(mu, sigma).unwrap();
        let stronger = DeltaVDistribution::new(mu * bump, sigma).unwrap();
        let wider = DeltaVDistribution::new(mu, sigma * bump).unwrap();
        prop_assert!(access_fail_prob_fixed(&stronger, v_os) <= access_fail_prob_fixed(&base, v_os));
        prop_assert!(access_fail_prob_fixed(&wider, v_os) >= access_fail_prob_fixed(&base, v_os));
    }

    #[test]
    fn ber_sits_inside_the_offset_envelope(d in delta_dist(), mu_vos in -0.02f64..0.05, sigma_vos in 0.002f64..0.03) {
        let off = OffsetVoltageDist::new(mu_vos, sigma_vos).unwrap();
        let ber = access_fail_prob_ber(&d, &off).unwrap();
        let lo = access_fail_prob_fixed(&d, mu_vos - 8.0 * sigma_vos);
        let hi = access_fail_prob_fixed(&d, mu_vos + 8.0 * sigma_vos);
        prop_assert!(ber >= lo * (1.0 - 1e-9) && ber <= hi * (1.0 + 1e-9), "{lo} <= {ber} <= {hi}");
    }

    #[test]
    fn write_failure_is_nonincreasing(d in write_dist()) {
        let grid: Vec<f64> = (0..1000).map(|k| d.t0 * (0.01 * k as f64).exp()).collect();
        let pf: Vec<f64> = grid.iter().map(|&t| write_fail_prob(&d, t)).collect();
        prop_assert!(pf.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn write_inversion_round_trips(d in write_dist(), lp in -10.0f64..-0.5) {
        let target = 10f64.powf(lp);
        if let Ok(t) = invert_write(&d, target) {
            prop_assert!(((write_fail_prob(&d, t) - target) / target).abs() < 1e-9);
        }
    }

    #[test]
    fn table_inversion_round_trips(lp in -6.0f64..-1.0) {
        let rows: Vec<AccessRow> = (0..12)
            .map(|k| {
                let t = 1e-10 * 1.25f64.powi(k);
                AccessRow { t_read: t, mu_delta: 0.1 + 0.02 * k as f64, sigma_delta: 0.01 + 0.001 * k as f64 }
            })
            .collect();
        let table = AccessTable::new(rows).unwrap();
        let off = OffsetVoltageDist::new(0.0, 0.02).unwrap();
        let target = 10f64.powf(lp);
        if let Ok(t) = table.invert(target, &off) {
            let back = table.ber_at(t, &off).unwrap();
            prop_assert!(((back - target) / target).abs() < 1e-6);
        }
    }
}

#[test]
fn characterized_moments_grow_with_the_deadline() {
    let cell = Cell::new(CellConfig::bundled_default()).unwrap();
    let grid = default_access_grid(&cell, 16).unwrap();
    let ch = characterize_access(
        &cell,
        &VariationSpec::bundled_default(),
        2000,
        &grid,
        OracleMode::Closed,
    )
    .unwrap();
    let Characterization::Access { table, .. } = &ch else {
        unreachable!()
    };
    let rows = table.rows();
    assert!(rows.windows(2).all(|w| w[1].mu_delta > w[0].mu_delta));
    assert!(rows.windows(2).all(|w| w[1].sigma_delta > w[0].sigma_delta));
    // and the read failure falls along the grid
    let pf: Vec<f64> = grid.iter().map(|&t| ch.failure_probability(t, None).unwrap()).collect();
    assert!(pf.windows(2).all(|w| w[1] < w[0]));
}
