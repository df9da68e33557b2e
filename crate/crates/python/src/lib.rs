//! Python bindings. Images cross the boundary as flat row-major lists plus a
//! shape, matrices as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use phytac::codec::{train_codec, CodecConfig, CodecParams};
use phytac::config::RunConfig;
use phytac::control::{control_step, solve_dare, LqrGain};
use phytac::diffusion::{ddim_step, ddim_timesteps, forward_noise, make_schedule, NoiseSchedule};
use phytac::geometry::{evaluate_scene, rank_candidates, Scene};
use phytac::metrics::{self, classify_outcome, EpisodeSummary};
use phytac::numerics::{Matrix, Rng as CoreRng};
use phytac::plant::{self, PlantConfig};
use phytac::{Error, ImprintImage};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ if matches!(e, Error::Io { .. } | Error::MissingArtifact { .. }) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Matrix::from_vec(r, c, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_image(pixels: Vec<f64>, rows: usize, cols: usize) -> PyResult<ImprintImage> {
    ImprintImage::new(rows, cols, pixels).map_err(py_err)
}

/// Seeded random stream.
#[pyclass(name = "Rng")]
struct PyRng(CoreRng);

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        PyRng(CoreRng::new(seed))
    }

    /// Independent child stream; the parent is not advanced.
    fn fork(&self, stream: u64) -> Self {
        PyRng(self.0.fork(stream))
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        self.0.normal_vec(n)
    }
}

/// Variational image codec.
#[pyclass(name = "Codec")]
struct PyCodec(CodecParams);

#[pymethods]
impl PyCodec {
    #[new]
    #[pyo3(signature = (rows, cols, latent_dim=16, hidden=128, seed=0))]
    fn new(rows: usize, cols: usize, latent_dim: usize, hidden: usize, seed: u64) -> PyResult<Self> {
        CodecParams::new(rows, cols, latent_dim, hidden, &mut CoreRng::new(seed))
            .map(PyCodec)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CodecParams::load(&path).map(PyCodec).map_err(py_err)
    }

    /// Trains on a list of flat images; returns the codec and per-epoch losses.
    #[staticmethod]
    #[pyo3(signature = (images, rows, cols, latent_dim=16, hidden=128, epochs=50, seed=0))]
    fn train(
        images: Vec<Vec<f64>>,
        rows: usize,
        cols: usize,
        latent_dim: usize,
        hidden: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let images = images
            .into_iter()
            .map(|p| to_image(p, rows, cols))
            .collect::<PyResult<Vec<_>>>()?;
        let config = CodecConfig {
            latent_dim,
            hidden,
            epochs,
            ..Default::default()
        };
        config.validate().map_err(py_err)?;
        let (codec, history) = train_codec(&images, &config, &mut CoreRng::new(seed)).map_err(py_err)?;
        let losses = history.epochs.iter().map(|e| e.total).collect();
        Ok((PyCodec(codec), losses))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.grid()
    }

    /// Posterior mean and log-variance.
    fn encode(&self, pixels: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (rows, cols) = self.0.grid();
        self.0.encode(&to_image(pixels, rows, cols)?).map_err(py_err)
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.decode(&z).map(ImprintImage::into_pixels).map_err(py_err)
    }

    fn reconstruction_l1(&self, images: Vec<Vec<f64>>) -> PyResult<f64> {
        let (rows, cols) = self.0.grid();
        let images = images
            .into_iter()
            .map(|p| to_image(p, rows, cols))
            .collect::<PyResult<Vec<_>>>()?;
        self.0.reconstruction_l1(&images.iter().collect::<Vec<_>>()).map_err(py_err)
    }
}

/// Cumulative noise schedule.
#[pyclass(name = "Schedule")]
struct PySchedule(NoiseSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps=200, beta_min=5e-4, beta_max=0.1))]
    fn new(steps: usize, beta_min: f64, beta_max: f64) -> PyResult<Self> {
        make_schedule(steps, beta_min, beta_max).map(PySchedule).map_err(py_err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn alpha_bars(&self) -> Vec<f64> {
        self.0.alpha_bars().to_vec()
    }

    fn forward_noise(&self, z0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        forward_noise(&z0, t, &self.0, &eps).map_err(py_err)
    }

    /// Deterministic step from `t` to `t_prev` given a noise estimate.
    fn ddim_step(&self, z_t: Vec<f64>, eps_hat: Vec<f64>, t: usize, t_prev: usize) -> PyResult<Vec<f64>> {
        ddim_step(&z_t, &eps_hat, t, t_prev, &self.0).map_err(py_err)
    }

    fn timesteps(&self, count: usize) -> PyResult<Vec<usize>> {
        ddim_timesteps(self.0.steps(), count).map_err(py_err)
    }
}

/// Returns `(P, K, closed_loop_radius)` for the discrete-time LQR problem.
#[pyfunction]
#[pyo3(name = "solve_dare")]
fn py_solve_dare(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    let g = solve_dare(&to_matrix(a)?, &to_matrix(b)?, &to_matrix(q)?, &to_matrix(r)?).map_err(py_err)?;
    Ok((from_matrix(&g.p), from_matrix(&g.k), g.closed_loop_radius))
}

/// Clamped feedback `-K e`; returns the increment and whether it was clamped.
#[pyfunction]
#[pyo3(name = "control_step")]
fn py_control_step(k: Vec<f64>, error: Vec<f64>, limit: f64) -> PyResult<(f64, bool)> {
    let m = k.len();
    let gain = LqrGain {
        p: Matrix::identity(m),
        k: Matrix::from_vec(1, m, k).map_err(py_err)?,
        iterations: 0,
        closed_loop_radius: 0.0,
    };
    control_step(&gain, &error, limit).map_err(py_err)
}

/// Ranks the candidates of a scene given as text. Each row is
/// `(candidate, w_p, f_cost, s_rough, c_n, u_c)` with normalized metrics, best first.
#[pyfunction]
#[pyo3(signature = (scene_text, config_text=""))]
fn rank_scene(scene_text: &str, config_text: &str) -> PyResult<Vec<(usize, f64, f64, f64, f64, f64)>> {
    let config = RunConfig::parse(config_text).map_err(py_err)?;
    let scene = Scene::parse(scene_text).map_err(py_err)?;
    let sensor = config.dataset.sensor;
    let eval = evaluate_scene(
        &scene,
        (sensor.rows, sensor.cols),
        config.dataset.contact_depth,
        config.geometry.normal_neighbors,
    )
    .map_err(py_err)?;
    let ranked = rank_candidates(&eval.inputs, &config.geometry.weights()).map_err(py_err)?;
    Ok(ranked
        .iter()
        .map(|r| {
            let m = r.metrics;
            (eval.source[r.index], r.w_p, r.f_cost, m.s_rough, m.c_n, m.u_c)
        })
        .collect())
}

/// `(mae, rmse, psnr, ssim)` between two flat images of the same shape.
#[pyfunction]
fn image_metrics(x: Vec<f64>, y: Vec<f64>, rows: usize, cols: usize) -> PyResult<(f64, f64, f64, f64)> {
    let m = metrics::image_metrics(&to_image(x, rows, cols)?, &to_image(y, rows, cols)?).map_err(py_err)?;
    Ok((m.mae, m.rmse, m.psnr_db, m.ssim))
}

/// `(sug, stg, fosg)` for a finished episode.
#[pyfunction]
#[pyo3(signature = (final_force, slip_force, held, final_slipping=false, slipped_after_hold=false, tol_f=0.15))]
fn classify(
    final_force: f64,
    slip_force: f64,
    held: bool,
    final_slipping: bool,
    slipped_after_hold: bool,
    tol_f: f64,
) -> (bool, bool, bool) {
    let o = classify_outcome(
        &EpisodeSummary {
            final_force,
            final_slipping,
            slipped_after_hold,
            held,
            slip_force,
        },
        tol_f,
    );
    (o.sug, o.stg, o.fosg)
}

/// `(slip_force, optimal_force)` in newtons under default plant settings.
#[pyfunction]
fn grip_forces(mass_kg: f64, friction_mu: f64) -> PyResult<(f64, f64)> {
    let config = PlantConfig::default();
    let f_opt = plant::optimal_force(mass_kg, friction_mu, &config).map_err(py_err)?;
    Ok((plant::slip_force(mass_kg, friction_mu, &config), f_opt))
}

/// Validates a TOML run configuration and returns it with defaults filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    RunConfig::parse(text).map(|c| c.to_toml()).map_err(py_err)
}

#[pymodule]
fn phytac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRng>()?;
    m.add_class::<PyCodec>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(py_solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(py_control_step, m)?)?;
    m.add_function(wrap_pyfunction!(rank_scene, m)?)?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(grip_forces, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    Ok(())
}
