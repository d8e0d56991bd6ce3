use zerosum_py::zerosum_py;
use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_round_trip_through_the_interpreter() {
    pyo3::append_to_inittab!(zerosum_py);
    Python::initialize();
    Python::attach(|py| -> PyResult<()> {
        let zs = py.import("zerosum_py")?;
        let json = py.import("json")?;

        let ex = json.call_method1("loads", (zs.call_method0("example")?,))?;
        let honest: f64 = ex.get_item("single_honest")?.extract()?;
        let manipulated: f64 = ex.get_item("single_manipulated")?.extract()?;
        assert!((honest + 0.693147).abs() < 1e-6);
        assert!((manipulated + 0.562335).abs() < 1e-6);

        let rule = zs.getattr("ZeroSumRule")?.call1(("log",))?;
        let s: Vec<f64> = rule
            .call_method1("scores", (vec![vec![0.5, 0.5], vec![0.25, 0.75]], 0usize))?
            .extract()?;
        assert!((s[0] + s[1]).abs() < 1e-12);
        assert!((s[0] - (0.5f64.ln() - 0.25f64.ln())).abs() < 1e-12);

        let decision = zs.getattr("DecisionRule")?.call1(("optimistic_max",))?;
        let inst = zs.getattr("Instance")?.call_method1("two_action_example", (2,))?;
        let kwargs = PyDict::new(py);
        kwargs.set_item("grid_resolution", 4)?;
        let report = json.call_method1("loads", (inst.call_method("audit", (decision,), Some(&kwargs))?,))?;
        assert!(report.get_item("honest_is_equilibrium")?.extract::<bool>()?);
        assert!(report.get_item("all_choose_a_star")?.extract::<bool>()?);

        let trace = json.call_method1("loads", (zs.call_method1("search", (8,))?,))?;
        assert_eq!(trace.get_item("comparisons")?.extract::<usize>()?, 3);

        let bad = zs.getattr("DecisionRule")?.call1(("random_mean_max",));
        assert!(bad.unwrap_err().is_instance_of::<pyo3::exceptions::PyValueError>(py));
        assert!(zs.getattr("ZeroSumRule")?.call1(("spherical",)).is_err());
        Ok(())
    })
    .unwrap();
}
