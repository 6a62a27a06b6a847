use trc_core::format::dbn3_network;
use trc_core::markov::moralize;
use trc_core::model::Evidence;
use trc_core::ori;
use trc_core::propagate::{compile, trivial_masks, EngineConfig};
use trc_core::regions::cvm_construct;
use trc_core::rgbf::rgbf_transform;
use trc_core::propagate::inner_decay_probe;

fn main() {
    let net = dbn3_network();
    let (bfg, meta) = trc_core::propagate::to_bfg(&net).unwrap();
    let mut ev = Evidence::empty();
    ev.set_by_name(&bfg, "yt1", "1").unwrap();
    let ev = trc_core::factorize::replicate_evidence(&bfg, &meta, &ev).unwrap();
    let masks = trc_core::factorize::evidence_masks(&bfg, &meta, &ev).unwrap();
    let mut fs = moralize(&bfg);
    let outer = ori::outer_regions(&bfg, &mut fs).unwrap();
    let graph = rgbf_transform(&cvm_construct(&outer, &fs).unwrap()).unwrap();
    let cfg = EngineConfig::default();
    let compiled = compile(&graph, &fs, &masks, &cfg).unwrap();
    inner_decay_probe(&compiled, &cfg);
}
