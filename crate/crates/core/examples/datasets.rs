//! Write a synthetic dataset in the on-disk format and read it back, or
//! inspect an existing dataset directory (for example one produced by the
//! ingest script).
//!
//! ```text
//! cargo run --example datasets                 # synthetic round trip
//! cargo run --example datasets -- data/pubmed  # inspect a directory
//! ```

use aggbuf::eval::degree_groups;
use aggbuf::graph::{generate_sbm, load_dataset, node_degrees, node_homophily, save_dataset, SbmConfig};

fn main() -> aggbuf::Result<()> {
    let data = match std::env::args().nth(1) {
        Some(dir) => load_dataset(dir)?,
        None => {
            let mut cfg = SbmConfig::default();
            cfg.parse_overrides("n=500,classes=3,p_in=0.03,p_out=0.003,feature_dim=16")?;
            let data = generate_sbm(&cfg)?;
            let dir = std::env::temp_dir().join("aggbuf-sbm-example");
            save_dataset(&data, &dir)?;
            println!("wrote {}", dir.display());
            let back = load_dataset(&dir)?;
            assert_eq!(back.graph, data.graph);
            back
        }
    };

    let degrees = node_degrees(&data.graph);
    let isolated = degrees.iter().filter(|&&d| d == 0).count();
    let homophily: Vec<f64> = node_homophily(&data.graph, &data.labels)?.into_iter().flatten().collect();
    println!("name          {}", data.name);
    println!("nodes         {}", data.num_nodes());
    println!("edges         {} undirected ({} directed entries)", data.graph.num_edges(), 2 * data.graph.num_edges());
    println!("features      {}", data.features.cols());
    println!("classes       {}", data.num_classes);
    println!("isolated      {isolated}");
    println!("mean degree   {:.2}", degrees.iter().sum::<usize>() as f64 / degrees.len() as f64);
    println!("homophily     {:.3}", homophily.iter().sum::<f64>() / homophily.len().max(1) as f64);
    for (name, s) in &data.splits {
        let (head, tail) = degree_groups(&data.graph, &s.test);
        println!("{name:<12}  train {} val {} test {} (head/tail {}/{})", s.train.len(), s.val.len(), s.test.len(), head.len(), tail.len());
    }
    Ok(())
}
