use mgarch::experiments::{run_power_study, PowerCase, PowerStudyConfig};

#[test]
#[ignore]
fn size_probe() {
    let cfg = PowerStudyConfig::standard(PowerCase::Arch, 0, 4000, 30, 900);
    let s = run_power_study(&cfg).unwrap();
    println!("size    T=4000 d=0 : {:?} (reps {} failed {})", s.rejection_rates, s.reps_used, s.reps_failed);
    let cfg = PowerStudyConfig::standard(PowerCase::Arch, 10, 4000, 10, 901);
    let s = run_power_study(&cfg).unwrap();
    println!("power   T=4000 d=10: {:?} (reps {} failed {})", s.rejection_rates, s.reps_used, s.reps_failed);
    let cfg = PowerStudyConfig::standard(PowerCase::Arch, 2, 4000, 10, 902);
    let s = run_power_study(&cfg).unwrap();
    println!("power   T=4000 d=2 : {:?} (reps {} failed {})", s.rejection_rates, s.reps_used, s.reps_failed);
}
