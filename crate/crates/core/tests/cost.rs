//! Closed-form traffic and FLOP counts.

use ist::cost::{
    cost_sweep_csv, dp_flops_per_step, dp_traffic_per_step, emit_cost_sweep, ist_flops_per_step,
    ist_traffic_per_step, CostQuery, COST_CSV_HEADER,
};
use ist::nn::ModelDims;

fn fig2() -> ModelDims {
    ModelDims::new(vec![1000, 4000, 4000, 4000, 200]).unwrap()
}

fn q(n: usize, j: usize) -> CostQuery {
    CostQuery::new(fig2(), n, j, 512).unwrap()
}

#[test]
fn figure_two_values() {
    assert_eq!(dp_traffic_per_step(&q(2, 10)), 73_600_000.0);
    assert_eq!(ist_traffic_per_step(&q(2, 10)), 2_080_000.0);
    assert_eq!(dp_flops_per_step(&q(2, 10)), 75_366_400_000.0);
    assert_eq!(ist_flops_per_step(&q(4, 10)), 26_214_400_000.0);
    assert_eq!(ist_flops_per_step(&q(1, 10)), dp_flops_per_step(&q(1, 10)));
}

#[test]
fn monotone_in_sites_and_local_steps() {
    for n in 1..16 {
        assert_eq!(dp_traffic_per_step(&q(2 * n, 10)), 2.0 * dp_traffic_per_step(&q(n, 10)));
        assert!(ist_traffic_per_step(&q(n + 1, 10)) < ist_traffic_per_step(&q(n, 10)));
        assert!(ist_traffic_per_step(&q(n, 11)) < ist_traffic_per_step(&q(n, 10)));
        assert!(ist_flops_per_step(&q(n + 1, 10)) <= ist_flops_per_step(&q(n, 10)));
    }
}

#[test]
fn sweep_rows_and_csv() {
    let rows = emit_cost_sweep(&fig2(), 512, 10, &[1, 2, 4, 8]).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1].dp_traffic > w[0].dp_traffic));
    assert!(rows.windows(2).all(|w| w[1].ist_traffic < w[0].ist_traffic));
    let csv = cost_sweep_csv(&rows, "fig2");
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# ist-costmodel v1"));
    assert_eq!(lines[1], COST_CSV_HEADER);
    assert_eq!(lines[3], "2,73600000,2080000,75366400000,42598400000");
    assert_eq!(emit_cost_sweep(&fig2(), 512, 10, &[1]).unwrap().len(), 1);
    assert!(emit_cost_sweep(&fig2(), 512, 10, &[]).is_err());
}
