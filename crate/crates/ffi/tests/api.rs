use std::ffi::{CStr, CString};
use std::ptr;

use pararelax_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pr_last_error()).to_string_lossy().into_owned() }
}

fn function(name: &str) -> *mut PrFunction {
    let name = CString::new(name).unwrap();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { pr_function_new(name.as_ptr(), &mut f) }, PrStatus::Ok);
    f
}

#[test]
fn para_sin_round_trip() {
    unsafe {
        let f = function("sin");
        let mut a = ptr::null_mut();
        let st = pr_para_approximate(f, 0.0, std::f64::consts::PI, 1.0, PrSide::Under, 0.9, &mut a);
        assert_eq!(st, PrStatus::Ok, "{}", last_error());
        assert_eq!(pr_para_len(a), 1);
        let (mut ca, mut lo, mut hi) = (0.0, 0.0, 0.0);
        assert_eq!(pr_para_piece(a, 0, &mut ca, ptr::null_mut(), ptr::null_mut(), &mut lo, &mut hi), PrStatus::Ok);
        assert!(ca < 0.0);
        assert_eq!((lo, hi), (0.0, std::f64::consts::PI));
        assert_eq!(pr_para_piece(a, 1, &mut ca, ptr::null_mut(), ptr::null_mut(), &mut lo, &mut hi), PrStatus::OutOfRange);
        let (mut pass, mut worst) = (0, 0.0);
        assert_eq!(pr_para_verify(a, 10_000, &mut pass, &mut worst), PrStatus::Ok);
        assert_eq!(pass, 1);
        let (mut env, mut fx) = (0.0, 0.0);
        pr_para_envelope(a, 1.0, &mut env);
        pr_function_eval(f, 1.0, &mut fx);
        assert!(env <= fx && env >= fx - 1.0);
        pr_para_free(a);
        pr_function_free(f);
    }
}

#[test]
fn construct_matches_piece_formula() {
    unsafe {
        let f = function("sin");
        let mut a = ptr::null_mut();
        assert_eq!(pr_para_construct(f, 0.0, 2.0 * std::f64::consts::PI, 1.0, 1.0, &mut a), PrStatus::Ok);
        assert_eq!(pr_para_len(a), (6.0 * std::f64::consts::PI).ceil() as usize);
        pr_para_free(a);
        pr_function_free(f);
    }
}

#[test]
fn pwl_ln_pieces_and_values() {
    unsafe {
        let f = function("ln");
        let mut p = ptr::null_mut();
        assert_eq!(pr_pwl_relax(f, (-4.0f64).exp(), 2.0f64.exp(), 0.1, &mut p), PrStatus::Ok);
        assert_eq!(pr_pwl_pieces(p), 10);
        let (mut t, mut v) = (0.0, 0.0);
        assert_eq!(pr_pwl_breakpoint(p, 0, &mut t, &mut v), PrStatus::Ok);
        assert!((v - (t.ln() - 0.05)).abs() < 1e-12);
        let mut w = 0.0;
        assert_eq!(pr_pwl_eval(p, t, &mut w), PrStatus::Ok);
        assert_eq!(w, v);
        assert_eq!(pr_pwl_eval(p, 100.0, &mut w), PrStatus::DomainError);
        pr_pwl_free(p);
        pr_function_free(f);
    }
}

#[test]
fn domain_errors_carry_messages() {
    unsafe {
        let f = function("ln");
        let mut a = ptr::null_mut();
        assert_eq!(pr_para_approximate(f, -1.0, 1.0, 0.1, PrSide::Under, 0.9, &mut a), PrStatus::DomainError);
        assert!(a.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(pr_para_approximate(f, 1.0, 2.0, 0.1, PrSide::Under, 1.5, &mut a), PrStatus::InvalidArgument);
        assert_eq!(pr_para_approximate(f, 2.0, 1.0, 0.1, PrSide::Under, 0.9, &mut a), PrStatus::InvalidArgument);
        pr_function_free(f);
    }
}

#[test]
fn round_bounds_examples() {
    unsafe {
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(pr_round_bounds(c"exp".as_ptr(), -132.0, -0.456, &mut lo, &mut hi), PrStatus::Ok);
        assert_eq!(lo, -200.0);
        assert_eq!(pr_round_bounds(c"exp".as_ptr(), -0.456, 1.0, &mut lo, &mut hi), PrStatus::Ok);
        assert_eq!(lo, -0.5);
        assert_eq!(pr_round_bounds(c"tan".as_ptr(), 0.0, 1.0, &mut lo, &mut hi), PrStatus::InvalidArgument);
    }
}

#[test]
fn relax_problem_and_write_model() {
    let json = CString::new(
        r#"{"variables": [{"name": "x", "lb": 0, "ub": 3.141592653589793}, {"name": "y", "lb": -2, "ub": 2}],
            "objective": {"coeffs": {"y": 1}},
            "constraints": [{"expr": "sin(x) - y", "rhs": 0}]}"#,
    )
    .unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(pr_problem_from_json(json.as_ptr(), &mut p), PrStatus::Ok, "{}", last_error());
        assert_eq!(pr_problem_univariate_count(p), 1);
        let mut m = ptr::null_mut();
        assert_eq!(pr_relax(p, PrTechnique::Pwl, 0.1, 0.9, &mut m), PrStatus::Ok, "{}", last_error());
        let (mut vars, mut bins, mut rows) = (0, 0, 0);
        assert_eq!(pr_model_sizes(m, &mut vars, &mut bins, &mut rows), PrStatus::Ok);
        assert_eq!((vars, bins), (3 + 7, 3));
        let mut text = ptr::null_mut();
        assert_eq!(pr_model_write(m, PrFormat::LpText, &mut text), PrStatus::Ok);
        let s = CStr::from_ptr(text).to_str().unwrap().to_owned();
        assert!(s.contains("SUBJECT TO") && s.contains("BINARY"));
        pr_string_free(text);
        pr_model_free(m);
        pr_problem_free(p);

        let bad = CString::new("{\"variables\": []").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(pr_problem_from_json(bad.as_ptr(), &mut p), PrStatus::ParseError);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        pr_function_free(ptr::null_mut());
        pr_para_free(ptr::null_mut());
        pr_pwl_free(ptr::null_mut());
        pr_problem_free(ptr::null_mut());
        pr_model_free(ptr::null_mut());
        pr_string_free(ptr::null_mut());
    }
}
