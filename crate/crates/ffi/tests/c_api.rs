use std::ffi::{CStr, CString};
use std::ptr;
use std::sync::Arc;

use sphereloc_ffi::*;

/// Uniform in [-1, 1).
fn lcg(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { sl_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn sht_round_trip_through_the_c_abi() {
    let b = 8;
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { sl_grid_new(b, &mut grid) }, SlStatus::Ok);
    let n = unsafe { sl_grid_len(grid) };
    assert_eq!(n, 4 * b * b);
    let nc = sl_coefficient_count(b);
    let mut state = 7;
    let re: Vec<f64> = (0..nc).map(|_| lcg(&mut state)).collect();
    let mut im: Vec<f64> = (0..nc).map(|_| lcg(&mut state)).collect();
    // m = 0 coefficients of a real signal are real
    let mut i = 0;
    for l in 0..b {
        im[i] = 0.0;
        i += l + 1;
    }
    let mut samples = vec![0.0; n];
    assert_eq!(unsafe { sl_sht_inverse(grid, re.as_ptr(), im.as_ptr(), nc, samples.as_mut_ptr(), n) }, SlStatus::Ok);
    let (mut re2, mut im2) = (vec![0.0; nc], vec![0.0; nc]);
    assert_eq!(
        unsafe { sl_sht_forward(grid, samples.as_ptr(), n, re2.as_mut_ptr(), im2.as_mut_ptr(), nc) },
        SlStatus::Ok
    );
    for j in 0..nc {
        assert!((re[j] - re2[j]).abs() < 1e-10 && (im[j] - im2[j]).abs() < 1e-10);
    }
    let status = unsafe { sl_sht_forward(grid, samples.as_ptr(), n - 1, re2.as_mut_ptr(), im2.as_mut_ptr(), nc) };
    assert_eq!(status, SlStatus::ShapeMismatch);
    assert!(last_error().contains("samples"));
    unsafe { sl_grid_free(grid) };
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { sl_grid_new(0, &mut grid) }, SlStatus::InvalidArgument);
    assert!(grid.is_null());
    assert_eq!(unsafe { sl_grid_new(4, ptr::null_mut()) }, SlStatus::NullPointer);
    assert_eq!(last_error(), "`out` is null");
    let text = unsafe { CStr::from_ptr(sl_status_string(SlStatus::Format)) };
    assert_eq!(text.to_str().unwrap(), "format error");
    let mut map = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.smap").unwrap();
    assert_eq!(unsafe { sl_map_load(missing.as_ptr(), &mut map) }, SlStatus::Io);
    let bad = CString::new("[grid]\nbandwith = 8\n").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sl_pipeline_new(bad.as_ptr(), &mut p) }, SlStatus::Config);
    assert!(last_error().contains("bandwith"));
    unsafe {
        sl_grid_free(ptr::null_mut());
        sl_map_free(ptr::null_mut());
        sl_pipeline_free(ptr::null_mut());
    }
}

#[test]
fn map_query_matches_library_ranking() {
    use sphereloc::map_store::{PlaceEntry, PlaceMap};
    use sphereloc::pose::Pose;
    use sphereloc::FeatureSphere;

    let mut state = 3;
    let sphere = Arc::new(FeatureSphere::zeros(4));
    let entries: Vec<PlaceEntry> = (0..50)
        .map(|i| PlaceEntry {
            id: i,
            pose: Pose::identity(),
            descriptor: (0..256).map(|_| lcg(&mut state) as f32).collect(),
            sphere: sphere.clone(),
        })
        .collect();
    let lib_map = PlaceMap::build(entries).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.smap");
    lib_map.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { sl_map_load(cpath.as_ptr(), &mut map) }, SlStatus::Ok);
    assert_eq!(unsafe { sl_map_len(map) }, 50);
    let q: Vec<f64> = (0..256).map(|_| lcg(&mut state)).collect();
    let (mut ids, mut dist, mut count) = (vec![0u32; 5], vec![0.0; 5], 0usize);
    let status = unsafe { sl_map_query(map, q.as_ptr(), q.len(), 5, ids.as_mut_ptr(), dist.as_mut_ptr(), &mut count) };
    assert_eq!(status, SlStatus::Ok);
    assert_eq!(count, 5);
    let want = lib_map.knn_query(&q, 5).unwrap();
    for (i, n) in want.iter().enumerate() {
        assert_eq!(ids[i], lib_map.entry(n.index).id);
        assert_eq!(dist[i], n.sq_dist.sqrt());
    }
    let status = unsafe { sl_map_query(map, q.as_ptr(), 3, 5, ids.as_mut_ptr(), dist.as_mut_ptr(), &mut count) };
    assert_eq!(status, SlStatus::ShapeMismatch);
    unsafe { sl_map_free(map) };
}

#[test]
fn vote_prefers_the_identical_sphere() {
    let config = CString::new("[grid]\nbandwidth = 8\n[features]\ndegrees = 8\n[taper]\nbandwidth = 6\n[voting]\nl_eval = 6\n").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sl_pipeline_new(config.as_ptr(), &mut p) }, SlStatus::Ok, "{}", last_error());
    let b = unsafe { sl_pipeline_bandwidth(p) };
    assert_eq!(b, 8);
    let per = 3 * 4 * b * b;
    let mut state = 11;
    let spheres: Vec<Vec<f64>> = (0..4).map(|_| (0..per).map(|_| lcg(&mut state)).collect()).collect();
    let query = spheres[2].clone();
    let flat: Vec<f64> = spheres.concat();
    let (mut selected, mut scores) = (usize::MAX, vec![0.0; 4]);
    let status = unsafe { sl_vote(p, query.as_ptr(), flat.as_ptr(), 4, &mut selected, scores.as_mut_ptr()) };
    assert_eq!(status, SlStatus::Ok, "{}", last_error());
    assert_eq!(selected, 2);
    assert!(scores.iter().enumerate().all(|(i, s)| i == 2 || *s < scores[2]));
    unsafe { sl_pipeline_free(p) };
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sphereloc.h")).unwrap();
    for name in ["sl_grid_new", "sl_sht_forward", "sl_map_query", "sl_vote", "SL_STATUS_OK", "typedef struct SlMap SlMap"] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
