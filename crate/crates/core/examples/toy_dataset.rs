//! Writes the synthetic two-class dataset in TU text format.
//!
//! `cargo run -p lgrpool-core --example toy_dataset -- <out_dir> [graphs] [seed]`

use std::path::PathBuf;

use lgrpool::graph::synthetic::toy_dataset;
use lgrpool::graph::write_tu_dataset;

fn main() -> lgrpool::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data/TOY".into()));
    let graphs = args.next().map_or(188, |s| s.parse().expect("graph count"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let ds = toy_dataset(graphs, seed);
    write_tu_dataset(&ds, &out)?;
    println!("{}", serde_json::to_string(&ds.summary())?);
    Ok(())
}
