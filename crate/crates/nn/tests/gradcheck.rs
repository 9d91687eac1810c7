use lobtrend_nn::check::gradcheck_suite;

#[test]
fn every_layer_and_architecture_passes() {
    let results = gradcheck_suite(3, 17).unwrap();
    assert_eq!(results.len(), 12);
    for r in &results {
        println!("{:<20} max rel err {:.3e} over {} values", r.name, r.worst.max_rel_error, r.worst.checked);
        assert!(r.passed(), "{}: {:?}", r.name, r.worst);
        assert!(r.worst.checked > 0);
    }
}
