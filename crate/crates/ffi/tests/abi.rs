use std::ffi::{c_char, CString};
use std::ptr;

use volpres_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let len = unsafe { vp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn matrix(n: usize, entries: &[f64]) -> *mut VpMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { vp_matrix_new(n, entries.as_ptr(), &mut m) }, VpStatus::Ok);
    m
}

#[test]
fn matrix_round_trip() {
    let m = matrix(2, &[1.0, 2.0, 3.0, 4.0]);
    unsafe {
        assert_eq!(vp_matrix_dim(m), 2);
        let mut buf = [0.0; 4];
        assert_eq!(vp_matrix_entries(m, buf.as_mut_ptr(), 4), VpStatus::Ok);
        assert_eq!(buf, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vp_matrix_entries(m, buf.as_mut_ptr(), 3), VpStatus::BufferTooSmall);
        let mut det = 0.0;
        assert_eq!(vp_matrix_det(m, &mut det), VpStatus::Ok);
        assert!((det + 2.0).abs() < 1e-14);
        vp_matrix_free(m);
    }
}

#[test]
fn sl_projection_of_diagonal() {
    let m = matrix(2, &[4.0, 0.0, 0.0, 0.0625]);
    unsafe {
        let mut r = VpProjection::default();
        let mut p = ptr::null_mut();
        assert_eq!(vp_project(m, VpTarget::SpecialLinear, &mut r, &mut p), VpStatus::Ok);
        let mut det = 0.0;
        assert_eq!(vp_matrix_det(p, &mut det), VpStatus::Ok);
        assert!((det - 1.0).abs() < 1e-10);
        assert!(r.distance > 0.0 && r.distance <= 0.1875 + 1e-12);
        assert!(r.kkt_residual < 1e-8);
        vp_matrix_free(p);
        vp_matrix_free(m);
    }
}

#[test]
fn sandwich_holds_for_shear() {
    let m = matrix(2, &[2.0, 1.0, 0.0, 1.0]);
    unsafe {
        let (mut ok, mut ratio) = (false, 0.0);
        assert_eq!(vp_verify_sl_sandwich(m, 0.1, &mut ok, &mut ratio), VpStatus::Ok);
        assert!(ok && ratio <= 1.0);
        vp_matrix_free(m);
    }
}

#[test]
fn errors_map_to_status() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(vp_matrix_new(2, ptr::null(), &mut m), VpStatus::NullPointer);
        assert!(last_error().contains("entries"));
        assert_eq!(vp_matrix_new(9, [0.0; 81].as_ptr(), &mut m), VpStatus::InvalidInput);
        let neg = matrix(2, &[-1.0, 0.0, 0.0, 1.0]);
        let mut r = VpProjection::default();
        assert_eq!(vp_project(neg, VpTarget::SpecialLinear, &mut r, ptr::null_mut()), VpStatus::Domain);
        assert!(!last_error().is_empty());
        vp_matrix_free(neg);
        assert_eq!(vp_matrix_dim(ptr::null()), 0);
        vp_matrix_free(ptr::null_mut());
        vp_field_free(ptr::null_mut());
    }
}

#[test]
fn divfree_of_sampled_map() {
    let spec = CString::new("compress:0.3").unwrap();
    let mut f = ptr::null_mut();
    unsafe {
        assert_eq!(vp_field_from_map(spec.as_ptr(), 2, 32, VpBoundary::Periodic, &mut f), VpStatus::Ok);
        assert_eq!(vp_field_len(f), 2 * 32 * 32);
        let mut r = VpDecomposition::default();
        let mut g = ptr::null_mut();
        assert_eq!(vp_field_divfree(f, 2.0, &mut r, &mut g), VpStatus::Ok);
        assert!(!r.vacuous && r.residual > 0.0 && r.ratio.is_finite());
        let mut vals = vec![0.0; vp_field_len(g)];
        assert_eq!(vp_field_values(g, vals.as_mut_ptr(), vals.len()), VpStatus::Ok);
        assert!(vals.iter().all(|v| v.is_finite()));
        vp_field_free(g);
        vp_field_free(f);

        let bad = CString::new("no_such_map").unwrap();
        let mut h = ptr::null_mut();
        assert_ne!(vp_field_from_map(bad.as_ptr(), 2, 8, VpBoundary::Clamped, &mut h), VpStatus::Ok);
        assert!(h.is_null());
    }
}

#[test]
fn field_from_values() {
    let n = 8;
    let grid: Vec<f64> = (0..n * n)
        .flat_map(|k| {
            let (i, j) = (k / n, k % n);
            [i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64]
        })
        .collect();
    let mut f = ptr::null_mut();
    unsafe {
        assert_eq!(
            vp_field_new(2, n, 0.0, 1.0, VpBoundary::Clamped, grid.as_ptr(), grid.len(), &mut f),
            VpStatus::Ok
        );
        assert_eq!(vp_field_len(f), grid.len());
        vp_field_free(f);
        assert_eq!(
            vp_field_new(2, n, 0.0, 1.0, VpBoundary::Clamped, grid.as_ptr(), grid.len() - 1, &mut f),
            VpStatus::InvalidInput
        );
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/volpres.h");
    for name in [
        "vp_last_error_message",
        "vp_matrix_new",
        "vp_matrix_free",
        "vp_matrix_dim",
        "vp_matrix_entries",
        "vp_matrix_det",
        "vp_project",
        "vp_verify_sl_sandwich",
        "vp_field_new",
        "vp_field_from_map",
        "vp_field_free",
        "vp_field_len",
        "vp_field_values",
        "vp_field_divfree",
        "vp_field_hamiltonian",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct VpMatrix VpMatrix;"));
}
