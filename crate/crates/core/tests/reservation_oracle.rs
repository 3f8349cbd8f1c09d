mod common;

#[test]
fn fcfs_matches_brute_force_in_every_order() {
    let n = common::reservation_oracle(1, 8, 5).unwrap();
    assert_eq!(n, 40_320);
}

#[test]
fn fcfs_matches_brute_force_on_many_small_sets() {
    common::reservation_oracle(200, 4, 6).unwrap();
}

#[test]
fn horizon_rejections_are_exact() {
    assert_eq!(common::horizon_rejections().unwrap(), 32);
}

#[test]
fn unknown_hv_region_equals_union_of_entries() {
    let n = common::hv_region_oracle(&[0, 137, 2_000, 4_321]).unwrap();
    assert_eq!(n, 4 * 601);
}

#[test]
fn earlier_of_two_conflicting_requests_wins() {
    let cs = common::small_corridors();
    // Eastbound and northbound throughs cross.
    use hybrid_aim_core::{Cardinal, TurnKind};
    let find = |d| {
        cs.iter()
            .find(|c| c.key.from == d && c.turn == TurnKind::Through)
            .unwrap()
    };
    let (e, n) = (find(Cardinal::East), find(Cardinal::North));
    let a = common::request(1, e, 50, 13.4);
    let clash = (0..100)
        .map(|t| common::request(2, n, t, 13.4))
        .find(|b| common::managed(5.0, 0, &[&a, b]) == vec![true, false])
        .expect("paths cross");
    assert_eq!(common::managed(5.0, 0, &[&clash, &a]), vec![true, false]);
    let apart = common::request(2, n, 200, 13.4);
    assert_eq!(common::managed(5.0, 0, &[&a, &apart]), vec![true, true]);
}
