use std::ffi::CString;

use pyo3::prelude::*;
use rankgan_py::rankgan_py as extension;

#[test]
fn python_smoke_script_passes() {
    pyo3::append_to_inittab!(extension);
    Python::initialize();
    let script = CString::new(include_str!("../../../python/smoke.py")).unwrap();
    Python::attach(|py| {
        if let Err(e) = py.run(&script, None, None) {
            e.print(py);
            panic!("smoke script failed: {e}");
        }
    });
}
