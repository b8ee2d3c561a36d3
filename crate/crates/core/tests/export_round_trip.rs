use mflq::examples::{build_speed_example, SpeedParams};
use mflq::export::{moments_table, riccati_table};
use mflq::riccati::solve_riccati;
use mflq::schema::{problem_from_json, problem_to_json};
use mflq::simulation::{propagate_moments, FeedbackLaw};
use mflq::TimeGrid;

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn problem_json_and_csv_tables_round_trip_exactly() {
    let spec = build_speed_example(&SpeedParams::reference()).unwrap().spec;
    let reparsed = problem_from_json(&problem_to_json(&spec).unwrap()).unwrap();
    assert_eq!(reparsed, spec);

    let grid = TimeGrid::new(1.0, 300).unwrap();
    let sol = solve_riccati(&reparsed, grid).unwrap();
    let table = riccati_table(&sol);
    let (header, rows) = parse_csv(&table.to_csv());
    assert_eq!(header, table.columns);
    assert_eq!(rows, table.rows);

    let law = FeedbackLaw::optimal(&reparsed, &sol).unwrap();
    let ms = propagate_moments(&reparsed, &law, &grid).unwrap();
    let mt = moments_table(&ms);
    let (_, rows) = parse_csv(&mt.to_csv());
    assert_eq!(rows, mt.rows);
    assert_eq!(rows.len(), grid.nodes());
}
