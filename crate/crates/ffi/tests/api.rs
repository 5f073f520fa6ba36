use std::ffi::{CStr, CString};
use std::ptr;

use coalescent_ffi::*;

fn last_error() -> String {
    let p = coal_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn two_point_fit_matches_closed_form() {
    let values = [0.0, 2.0];
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(coal_data_from_real(values.as_ptr(), 2, 1, &mut data), CoalStatus::Ok);
        assert_eq!(coal_data_rows(data), 2);
        assert_eq!(coal_data_cols(data), 1);

        let mut tree = ptr::null_mut();
        let st = coal_fit_greedy(data, CoalModel::Auto, CoalGreedy::Rate1, 1, &mut tree);
        assert_eq!(st, CoalStatus::Ok);
        assert_eq!(coal_tree_leaves(tree), 2);

        // optimal duration for a squared gap of 4 at unit rate is (sqrt(17) - 1) / 4
        let delta = (17f64.sqrt() - 1.0) / 4.0;
        assert!((coal_tree_log_prior(tree) + delta).abs() < 1e-9);

        let mut s = ptr::null_mut();
        assert_eq!(coal_tree_newick(tree, data, &mut s), CoalStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_string();
        coal_string_free(s);
        assert!(text.starts_with("(r0:0.7807764") || text.starts_with("(0:0.7807764"), "{text}");

        let mut joint = 0.0;
        assert_eq!(coal_tree_joint_log_prob(tree, data, &mut joint), CoalStatus::Ok);
        let expected = -delta - 0.5 * (2.0 * std::f64::consts::PI * 2.0 * delta).ln() - 4.0 / (4.0 * delta);
        assert!((joint - expected).abs() < 1e-9, "{joint} vs {expected}");

        coal_tree_free(tree);
        coal_data_free(data);
    }
}

#[test]
fn restore_fills_missing_cells() {
    let codes = [0, 1, 0, 1, 0, -1, 1, 0, 1, 1, 0, 1];
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(coal_data_from_categorical(codes.as_ptr(), 4, 3, 2, &mut data), CoalStatus::Ok);
        let mut x = 0.0;
        assert_eq!(coal_data_get(data, 1, 2, &mut x), CoalStatus::Ok);
        assert!(x.is_nan());

        let mut tree = ptr::null_mut();
        assert_eq!(
            coal_fit_smc(data, CoalModel::Multinomial, CoalProposal::PostPost, 20, 3, &mut tree),
            CoalStatus::Ok
        );
        assert!(coal_tree_log_marginal(tree).is_finite());

        let mut filled = ptr::null_mut();
        assert_eq!(coal_tree_restore(tree, data, &mut filled), CoalStatus::Ok);
        assert_eq!(coal_data_get(filled, 1, 2, &mut x), CoalStatus::Ok);
        assert!(x == 0.0 || x == 1.0);
        assert_eq!(coal_data_get(filled, 0, 1, &mut x), CoalStatus::Ok);
        assert_eq!(x, 1.0);

        coal_data_free(filled);
        coal_tree_free(tree);
        coal_data_free(data);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(coal_data_from_real(ptr::null(), 1, 1, &mut data), CoalStatus::NullPointer);
        assert!(last_error().contains("values"));

        let path = CString::new("/nonexistent/file.csv").unwrap();
        assert_eq!(coal_data_load_csv(path.as_ptr(), ptr::null(), ptr::null(), &mut data), CoalStatus::Io);
        assert!(last_error().starts_with("io:"));

        let schema = CString::new("cat:1").unwrap();
        assert_eq!(
            coal_data_load_csv(path.as_ptr(), schema.as_ptr(), ptr::null(), &mut data),
            CoalStatus::Argument
        );

        let one = [1.0];
        assert_eq!(coal_data_from_real(one.as_ptr(), 1, 1, &mut data), CoalStatus::Ok);
        let mut tree = ptr::null_mut();
        let st = coal_fit_smc(data, CoalModel::Auto, CoalProposal::PriorPrior, 10, 0, &mut tree);
        assert_eq!(st, CoalStatus::Argument);
        assert!(tree.is_null());
        let st = coal_fit_greedy(data, CoalModel::Multinomial, CoalGreedy::Rate1, 1, &mut tree);
        assert_eq!(st, CoalStatus::Unsupported);

        let mut x = 0.0;
        assert_eq!(coal_data_get(data, 5, 0, &mut x), CoalStatus::Argument);
        coal_data_free(data);

        assert_eq!(coal_tree_leaves(ptr::null()), 0);
        assert!(coal_tree_log_prior(ptr::null()).is_nan());
        coal_tree_free(ptr::null_mut());
        coal_string_free(ptr::null_mut());
    }
}

#[test]
fn loads_csv_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "a,b\n0.5,1\nNA,2\n3,-1\n").unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(coal_data_load_csv(cpath.as_ptr(), ptr::null(), ptr::null(), &mut data), CoalStatus::Ok);
        assert_eq!(coal_data_rows(data), 3);
        let mut x = 0.0;
        coal_data_get(data, 1, 0, &mut x);
        assert!(x.is_nan());
        let mut tree = ptr::null_mut();
        assert_eq!(coal_fit_greedy(data, CoalModel::Brownian, CoalGreedy::MaxProb, 2, &mut tree), CoalStatus::Ok);
        assert_eq!(coal_tree_leaves(tree), 3);
        coal_tree_free(tree);
        coal_data_free(data);
    }
}
