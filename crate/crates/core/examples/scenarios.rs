//! Generates one scenario per road layout, rasterizes its BEV grid and
//! round-trips it through JSON.

use goaldiff::scene::bev::{CH_DRIVABLE, CH_OCCUPANCY};
use goaldiff::scene::{generate_scenario, rasterize_bev, GridConfig, LayoutKind, Scenario};

fn main() -> goaldiff::Result<()> {
    let grid_cfg = GridConfig::default();
    let dir = std::env::temp_dir().join("goaldiff_scenarios");
    std::fs::create_dir_all(&dir)?;
    for kind in LayoutKind::ALL {
        let s = generate_scenario(kind, 1, 0.6)?;
        let grid = rasterize_bev(&s, &grid_cfg)?;
        let cells = (grid_cfg.height * grid_cfg.width) as f64;
        let drivable = grid.channel(CH_DRIVABLE).iter().sum::<f64>() / cells;
        let occupied = grid.channel(CH_OCCUPANCY).iter().sum::<f64>() / cells;
        let end = s.gt.endpoint();
        println!(
            "{:<10} command {:<8} agents {:>2}  speed {:.1} m/s  gt end ({:5.1}, {:5.1})  drivable {:.1}%  occupied {:.2}%",
            kind.as_str(),
            format!("{:?}", s.command),
            s.agents.len(),
            s.current().motion()[0],
            end[0],
            end[1],
            100.0 * drivable,
            100.0 * occupied
        );
        let path = dir.join(format!("{}.json", kind.as_str()));
        s.save(&path)?;
        assert_eq!(Scenario::load(&path)?, s);
    }
    println!("scenarios written to {}", dir.display());
    Ok(())
}
