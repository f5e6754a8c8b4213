use gemmguard::analysis::{
    build_coverage_curve, layer_vulnerabilities, plan_protection, rank_correlation, relative_costs, Scheme,
};
use gemmguard::injector::{run_campaign, CampaignConfig};
use gemmguard::model::{Dataset, ToyConfig};
use gemmguard::profiler::{profile_ranges, select_golden};

fn main() {
    let model = ToyConfig::new(3, 64, 4, 10, 7).build().unwrap();
    let data = Dataset::teacher_labeled(&model, 300, 8).unwrap();
    let golden = select_golden(&model, &data).unwrap();
    let ranges = profile_ranges(&model, &data).unwrap();
    let campaign = run_campaign(&model, &data, &golden, &ranges, &CampaignConfig::new(200, 9)).unwrap();

    let vulns = layer_vulnerabilities(&model, &campaign).unwrap();
    println!("{:<20} {:>8} {:>8} {:>10} {:>10}", "layer", "v_orig", "p_prop", "dloss", "v_layer");
    for v in &vulns {
        let name = &model.layers[v.layer_index].name;
        println!("{name:<20} {:>8.4} {:>8.4} {:>10.4} {:>10.6}", v.v_orig, v.p_prop, v.delta_loss, v.v_layer);
    }
    let p: Vec<f64> = vulns.iter().map(|v| v.p_prop).collect();
    let d: Vec<f64> = vulns.iter().map(|v| v.delta_loss).collect();
    println!("rank correlation p_prop vs delta_loss: {:.3}", rank_correlation(&p, &d));

    let v: Vec<f64> = vulns.iter().map(|v| v.v_layer).collect();
    for scheme in [Scheme::Duplication, Scheme::Checksum] {
        let curve = build_coverage_curve(&v, &relative_costs(&model, scheme)).unwrap();
        let at = curve.points.iter().find(|p| p.coverage >= 0.9).unwrap();
        println!("{scheme}: 90% coverage costs {:.3}% of an inference", at.overhead * 100.0);
        let plan = plan_protection(&model, &vulns, scheme, 0.99, true).unwrap();
        println!("  99% plan: layers {:?}, overhead {:.3}%", plan.selected, plan.compute_overhead * 100.0);
    }
}
