use gra_core::config::Config;
use gra_core::engine::{run, AccessMode};

fn small(n: u32) -> Config {
    let mut c = Config::default();
    c.scenario.device_count = n;
    c.engine.horizon = 12.0;
    c
}

#[test]
fn same_seed_same_report() {
    for mode in [AccessMode::GroupedRa, AccessMode::Eab] {
        let c = small(800);
        let a = run(&c, mode, 17).unwrap();
        let b = run(&c, mode, 17).unwrap();
        assert_eq!(a, b, "{mode}");
        let other = run(&c, mode, 18).unwrap();
        assert_ne!(a.delays, other.delays, "{mode}");
    }
}

#[test]
fn global_updates_keep_the_run_deterministic() {
    let mut c = small(600);
    c.engine.update_interval = 2.0;
    let a = run(&c, AccessMode::GroupedRa, 3).unwrap();
    assert!(a.group_count.len() >= 6);
    assert_eq!(a, run(&c, AccessMode::GroupedRa, 3).unwrap());
}
