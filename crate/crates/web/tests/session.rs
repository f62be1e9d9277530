use tomobench_web::{to_rgba, Session};

#[test]
fn rgba_mapping_clamps_and_is_opaque() {
    let px = to_rgba(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 1.0);
    assert_eq!(px.len(), 20);
    let gray: Vec<u8> = px.chunks(4).map(|c| c[0]).collect();
    assert_eq!(gray, [0, 0, 128, 255, 255]);
    assert!(px.chunks(4).all(|c| c[3] == 255 && c[0] == c[1] && c[1] == c[2]));
}

#[test]
fn reconstruction_needs_a_scan() {
    let s = Session::new(32, 1).unwrap();
    assert!(s.fbp(false).unwrap_err().contains("simulate"));
    assert!(Session::new(8, 1).is_err());
}

#[test]
fn full_scan_fbp_and_tv_recover_the_phantom() {
    let mut s = Session::new(48, 3).unwrap();
    let sino = s.simulate(120, 0.0, 360.0).unwrap();
    assert_eq!((sino.width, sino.height), (72, 120));
    assert_eq!(sino.rgba.len(), 72 * 120 * 4);
    let f = s.fbp(true).unwrap();
    assert_eq!(f.rgba.len(), 48 * 48 * 4);
    assert!(f.ssim > 0.6, "fbp ssim {}", f.ssim);
    let t = s.tv(1e-2, 60).unwrap();
    assert!(t.ssim > 0.6, "tv ssim {}", t.ssim);
}

#[test]
fn wedge_keeps_the_leading_rows_and_noise_is_seeded() {
    let mut a = Session::new(32, 5).unwrap();
    let w = a.simulate(90, 1e4, 90.0).unwrap();
    assert_eq!(w.height, 23);
    let mut b = Session::new(32, 5).unwrap();
    assert_eq!(b.simulate(90, 1e4, 90.0).unwrap().rgba, w.rgba);
    let fa = a.fbp(false).unwrap();
    let full = {
        a.simulate(90, 1e4, 360.0).unwrap();
        a.fbp(false).unwrap()
    };
    assert!(full.psnr_db > fa.psnr_db);
}
