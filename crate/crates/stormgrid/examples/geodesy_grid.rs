//! Tour of the geodesy and grid primitives: movement bearing, great-circle
//! distance, the inverse destination problem, and cell-id arithmetic on a
//! one-degree coordinate grid.
//!
//! ```bash
//! cargo run --release --example geodesy_grid
//! ```

use stormgrid::geo::{bearing, destination, fit_grid, great_circle_miles, GeoPoint};

fn main() {
    let atlantic_fix = GeoPoint { lat: 9.7, lon: -28.5 };
    let six_hours_later = GeoPoint { lat: 9.7, lon: -29.8 };

    let beta = bearing(atlantic_fix, six_hours_later).expect("distinct points");
    let miles = great_circle_miles(atlantic_fix, six_hours_later);
    println!("displacement: {miles:.2} miles on bearing {beta:.2} deg");

    let reconstructed = destination(atlantic_fix, beta, miles);
    println!(
        "destination() inverts it: ({:.4}, {:.4}) vs ({:.4}, {:.4})",
        reconstructed.lat, reconstructed.lon, six_hours_later.lat, six_hours_later.lon
    );

    // a small storm-season point cloud
    let points: Vec<GeoPoint> = (0..40)
        .map(|i| GeoPoint {
            lat: 10.0 + 0.7 * i as f64,
            lon: -60.0 + 0.9 * i as f64,
        })
        .collect();
    let grid = fit_grid(&points, 1.0).expect("nonempty");
    println!(
        "fitted grid: lon [{}, {}], lat [{}, {}], {} cells ({} per longitude column)",
        grid.lon_min,
        grid.lon_max,
        grid.lat_min,
        grid.lat_max,
        grid.cell_count(),
        grid.lat_cells()
    );

    for p in &points[..3] {
        let id = grid.grid_id(*p).expect("in bounds");
        let center = grid.cell_center(id).expect("valid id");
        println!(
            "({:5.1}, {:6.1}) -> cell {id:5} -> center ({:5.1}, {:6.1})",
            p.lat, p.lon, center.lat, center.lon
        );
    }

    // the id round-trip holds over the whole grid
    let ok = (0..grid.cell_count())
        .all(|id| grid.grid_id(grid.cell_center(id).unwrap()).unwrap() == id);
    println!("grid_id(cell_center(id)) == id for all {} cells: {ok}", grid.cell_count());
}
