use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use gradlab_ffi::*;

fn last_error() -> String {
    let p = gl_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Net(*mut GlParams);

impl Drop for Net {
    fn drop(&mut self) {
        unsafe { gl_params_free(self.0) }
    }
}

fn net(widths: &[usize], seed: u64) -> Net {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { gl_params_xavier(widths.as_ptr(), widths.len(), seed, &mut p) }, GlStatus::Ok);
    Net(p)
}

fn layer(n: &Net, l: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut fi, mut fo) = (0, 0);
    unsafe {
        assert_eq!(gl_params_layer_shape(n.0, l, &mut fi, &mut fo), GlStatus::Ok);
        let mut w = vec![0.0; fi * fo];
        let mut b = vec![0.0; fo];
        assert_eq!(gl_params_copy_layer(n.0, l, w.as_mut_ptr(), w.len(), b.as_mut_ptr(), b.len()), GlStatus::Ok);
        (w, b)
    }
}

fn batch() -> (Vec<f64>, Vec<u32>) {
    let x: Vec<f64> = (0..4 * 3).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
    (x, vec![0, 1, 1, 0])
}

#[test]
fn winsorize_and_proper_accuracy() {
    let v = [-10.0, 1.0, 2.0, 3.0, 100.0];
    let mut s = 0.0;
    unsafe {
        assert_eq!(gl_winsorize(v.as_ptr(), v.len(), 20.0, &mut s), GlStatus::Ok);
        assert_eq!(s, 10.0);
        assert_eq!(gl_winsorize(v.as_ptr(), v.len(), 0.0, &mut s), GlStatus::Ok);
        assert_eq!(s, 96.0);
        assert_eq!(gl_winsorize(v.as_ptr(), v.len(), 60.0, &mut s), GlStatus::InvalidArgument);
        let bad = [1.0, f64::NAN];
        assert_eq!(gl_winsorize(bad.as_ptr(), 2, 10.0, &mut s), GlStatus::NonFinite);
        assert_eq!(gl_winsorize(ptr::null(), 3, 10.0, &mut s), GlStatus::NullPointer);
        let mut a = 0.0;
        assert_eq!(gl_proper_accuracy(1.0, 10, &mut a), GlStatus::Ok);
        assert!((a - 0.1).abs() < 1e-15);
    }
}

#[test]
fn handles_report_shapes_and_reject_bad_widths() {
    let n = net(&[3, 5, 2], 1);
    assert_eq!(unsafe { gl_params_num_layers(n.0) }, 2);
    let (w, b) = layer(&n, 0);
    assert_eq!((w.len(), b.len()), (15, 5));
    let mut small = [0.0; 3];
    let mut bias = [0.0; 5];
    let s = unsafe { gl_params_copy_layer(n.0, 0, small.as_mut_ptr(), 3, bias.as_mut_ptr(), 5) };
    assert_eq!(s, GlStatus::Shape);
    let (mut fi, mut fo) = (0, 0);
    assert_eq!(unsafe { gl_params_layer_shape(n.0, 9, &mut fi, &mut fo) }, GlStatus::InvalidArgument);

    let mut p = ptr::null_mut();
    let widths = [3usize];
    assert_eq!(unsafe { gl_params_xavier(widths.as_ptr(), 1, 0, &mut p) }, GlStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(last_error().contains("architecture"));
    unsafe { gl_params_free(ptr::null_mut()) };
}

#[test]
fn gradients_sum_and_sgd_step() {
    let n = net(&[3, 4, 2], 7);
    let (x, y) = batch();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(gl_gradients_compute(n.0, x.as_ptr(), y.as_ptr(), 4, &mut g), GlStatus::Ok);
        let d = gl_gradients_num_coordinates(g);
        assert_eq!(d, 3 * 4 + 4 + 4 * 2 + 2);
        let mut sum = vec![0.0; d];
        assert_eq!(gl_gradients_batch_sum(g, sum.as_mut_ptr(), d), GlStatus::Ok);
        let mut acc = vec![0.0; d];
        let mut row = vec![0.0; d];
        for e in 0..4 {
            assert_eq!(gl_gradients_per_example(g, e, row.as_mut_ptr(), d), GlStatus::Ok);
            acc.iter_mut().zip(&row).for_each(|(a, r)| *a += r);
        }
        for (a, s) in acc.iter().zip(&sum) {
            assert!((a - s).abs() <= 1e-12 * s.abs().max(1.0));
        }
        assert_eq!(gl_gradients_per_example(g, 4, row.as_mut_ptr(), d), GlStatus::InvalidArgument);
        assert_eq!(gl_gradients_batch_sum(g, sum.as_mut_ptr(), d - 1), GlStatus::Shape);

        // c = 0 must coincide with plain SGD.
        let a = net(&[3, 4, 2], 7);
        let b = net(&[3, 4, 2], 7);
        assert_eq!(gl_sgd_step(a.0, g, 0.5), GlStatus::Ok);
        assert_eq!(gl_winsorized_sgd_step(b.0, g, 0.0, 0.5), GlStatus::Ok);
        assert_eq!(layer(&a, 0), layer(&b, 0));
        assert_eq!(layer(&a, 1), layer(&b, 1));

        // Weight moves by -(lr / m) * gradient sum.
        let (w0, _) = layer(&n, 0);
        let (w1, _) = layer(&a, 0);
        assert!((w1[0] - (w0[0] - 0.5 / 4.0 * sum[0])).abs() < 1e-15);

        assert_eq!(gl_winsorized_sgd_step(b.0, g, 50.0, 0.5), GlStatus::InvalidArgument);
        assert_eq!(gl_sgd_step(b.0, g, -1.0), GlStatus::InvalidArgument);
        let other = net(&[3, 5, 2], 7);
        assert_eq!(gl_sgd_step(other.0, g, 0.1), GlStatus::Shape);
        gl_gradients_free(g);
    }
}

#[test]
fn forward_losses_reject_bad_labels() {
    let n = net(&[3, 4, 2], 3);
    let (x, mut y) = batch();
    let mut losses = [0.0; 4];
    unsafe {
        assert_eq!(gl_forward_losses(n.0, x.as_ptr(), y.as_ptr(), 4, losses.as_mut_ptr()), GlStatus::Ok);
        assert!(losses.iter().all(|l| l.is_finite() && *l > 0.0));
        y[2] = 5;
        assert_eq!(gl_forward_losses(n.0, x.as_ptr(), y.as_ptr(), 4, losses.as_mut_ptr()), GlStatus::InvalidArgument);
        assert!(last_error().contains("label"));
    }
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("net.ckpt").to_str().unwrap()).unwrap();
    let n = net(&[3, 4, 2], 11);
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(gl_checkpoint_save(n.0, file.as_ptr()), GlStatus::Ok);
        assert_eq!(gl_checkpoint_load(file.as_ptr(), &mut p), GlStatus::Ok);
    }
    let back = Net(p);
    assert_eq!(layer(&n, 0), layer(&back, 0));
    assert_eq!(layer(&n, 1), layer(&back, 1));

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { gl_checkpoint_load(missing.as_ptr(), &mut q) }, GlStatus::Io);
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gl_checkpoint_load(junk.as_ptr(), &mut q) }, GlStatus::Format);
    assert_eq!(unsafe { gl_checkpoint_save(n.0, ptr::null()) }, GlStatus::NullPointer);
}

#[test]
fn fraction_stats_partition() {
    let gp = [1.0, 2.0, 0.0];
    let gc = [0.5, -1.0, 3.0];
    let g: Vec<f64> = gp.iter().zip(&gc).map(|(a, b)| a + b).collect();
    let (mut fp, mut fc, mut defined) = (0.0, 0.0, 0);
    unsafe {
        assert_eq!(gl_fraction_stats(g.as_ptr(), gp.as_ptr(), gc.as_ptr(), 3, &mut fp, &mut fc, &mut defined), GlStatus::Ok);
    }
    assert_eq!(defined, 1);
    // <g,g> = 2.25 + 1 + 9 = 12.25; <g,gp> = 1.5 + 2 = 3.5.
    assert!((fp - 3.5 / 12.25).abs() < 1e-15);
    assert!((fp + fc - 1.0).abs() < 1e-15);

    let zero = [0.0; 3];
    unsafe {
        assert_eq!(gl_fraction_stats(zero.as_ptr(), zero.as_ptr(), zero.as_ptr(), 3, &mut fp, &mut fc, &mut defined), GlStatus::Ok);
    }
    assert_eq!(defined, 0);
    assert!(fp.is_nan());
}

#[test]
fn run_experiment_reports_missing_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(dir.path().join("absent.cfg").to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gl_run_experiment(cfg.as_ptr(), out.as_ptr()) }, GlStatus::Io);
    assert!(last_error().contains("absent.cfg"));

    std::fs::write(dir.path().join("bad.cfg"), "total_steps = 0\n").unwrap();
    let bad = CString::new(dir.path().join("bad.cfg").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gl_run_experiment(bad.as_ptr(), out.as_ptr()) }, GlStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gradlab.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for name in [
        "gl_last_error_message",
        "gl_proper_accuracy",
        "gl_winsorize",
        "gl_params_xavier",
        "gl_params_free",
        "gl_params_num_layers",
        "gl_params_layer_shape",
        "gl_params_copy_layer",
        "gl_checkpoint_save",
        "gl_checkpoint_load",
        "gl_forward_losses",
        "gl_gradients_compute",
        "gl_gradients_free",
        "gl_gradients_num_coordinates",
        "gl_gradients_batch_sum",
        "gl_gradients_per_example",
        "gl_sgd_step",
        "gl_winsorized_sgd_step",
        "gl_fraction_stats",
        "gl_run_experiment",
        "GL_STATUS_OK = 0",
        "GL_STATUS_PANIC = 7",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }

    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"gradlab.h\"\n\
         int main(void) {\n\
           gl_params *p = 0;\n\
           size_t w[3] = {4, 3, 2};\n\
           if (gl_params_xavier(w, 3, 1, &p) != GL_STATUS_OK) return 1;\n\
           gl_params_free(p);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success(), "header does not compile as C99");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
