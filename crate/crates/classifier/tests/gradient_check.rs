use dwiqa_classifier::arch::{ArchSpec, Family};
use dwiqa_classifier::gradcheck::{check_graph, check_network, layer_graphs, random_point, GradCheckConfig};

const SEEDS: u64 = 20;

#[test]
fn every_layer_type_single_and_double() {
    for (name, g) in layer_graphs() {
        for seed in 0..SEEDS {
            let (p, x) = random_point::<f64>(&g, seed);
            let r = check_graph::<f64, f64>(&g, &p, &x, &GradCheckConfig::double(), seed);
            assert!(r.max_rel_err() < 1e-6, "{name} f64 seed {seed}: {:?}", r.worst());
            let (p, x) = random_point::<f32>(&g, seed);
            let r = check_graph::<f32, f64>(&g, &p, &x, &GradCheckConfig::single(), seed);
            assert!(r.max_rel_err() < 1e-3, "{name} f32 seed {seed}: {:?}", r.worst());
            assert!(r.checked() > r.skipped(), "{name}: {} skipped", r.skipped());
        }
    }
}

#[test]
fn every_architecture_single_and_double() {
    let t = std::time::Instant::now();
    for family in [Family::MiniDense, Family::MiniRes, Family::MiniSe] {
        let spec = ArchSpec::new(family);
        let (mut w32, mut w64) = (0f64, 0f64);
        for seed in 0..SEEDS {
            let classes = if seed % 2 == 0 { 2 } else { 5 };
            let r = check_network::<f64, f64>(&spec, classes, 64, 64, seed, &GradCheckConfig::double().sampled(4)).unwrap();
            assert!(r.max_rel_err() < 1e-6, "{family} f64 seed {seed}: {:?}", r.worst());
            w64 = w64.max(r.max_rel_err());
            let r = check_network::<f32, f64>(&spec, classes, 64, 64, seed, &GradCheckConfig::single().sampled(4)).unwrap();
            assert!(r.max_rel_err() < 1e-3, "{family} f32 seed {seed}: {:?}", r.worst());
            w32 = w32.max(r.max_rel_err());
        }
        eprintln!("{family}: max rel err f32 {w32:.2e}, f64 {w64:.2e}");
    }
    eprintln!("architectures checked in {:?}", t.elapsed());
}
