//! Coarse-vs-fine and high-vs-low rerank contrasts on long synthetic documents.

use funnelrag::corpus::Corpus;
use funnelrag::pipeline::{contrast_mode, ContrastMode, ContrastSettings, FunnelConfig, FunnelResources};
use funnelrag::synth::{generate, SynthConfig};

fn main() -> funnelrag::Result<()> {
    let set = generate(&SynthConfig::contrast(5))?;
    let config = FunnelConfig::default();
    let resources = FunnelResources::build(Corpus::from_records(set.records)?, config.max_cluster_size, config.bm25())?;
    let settings = ContrastSettings::default();
    for mode in [ContrastMode::CoarseVsFine, ContrastMode::HighVsLow] {
        let report = contrast_mode(&set.qa, &resources, &config, mode, &settings)?;
        println!("{mode}");
        print!("{}", report.table());
    }
    Ok(())
}
