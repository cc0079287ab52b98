//! Acceptance suite. Prints one PASS/FAIL line per criterion (details
//! indented underneath) and exits non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use batchfem::bench::{default_tolerance, read_csv, Prepared, CSV_HEADER, STATUS_OK};
use batchfem::engine::{
    integrate_batches, specialize_kernel, with_workers, CoefficientField, ElementMatrixStore,
    KernelConfig,
};
use batchfem::forms::{build_k, FormSpec, Operator};
use batchfem::geometry::{
    geometry_tensors, jitter_mesh, pack_geometry, pack_tensors, structured_simplicial_mesh, Mesh,
};
use batchfem::oracle::assemble_element_direct;
use batchfem::{Precision, Scalar};

const SEED: u64 = 42;
const JITTER: f64 = 0.15;

type Outcome = Result<Vec<String>, Vec<String>>;
type Criterion = (&'static str, fn() -> Outcome);

/// Dyadic resolutions: 2048 triangles, 3072 tetrahedra.
fn resolution(dim: usize) -> usize {
    if dim == 2 {
        32
    } else {
        8
    }
}

fn jittered(dim: usize) -> Mesh {
    jitter_mesh(
        &structured_simplicial_mesh(dim, resolution(dim)).unwrap(),
        JITTER,
        SEED,
    )
    .unwrap()
}

fn run<T: Scalar>(
    mesh: &Mesh,
    spec: &FormSpec,
    config: &KernelConfig,
    w: Option<&CoefficientField>,
) -> ElementMatrixStore<T> {
    let variant = specialize_kernel::<T>(spec, &build_k(spec).unwrap(), config).unwrap();
    let geom = pack_geometry::<T>(mesh, config).unwrap();
    integrate_batches(&variant, &geom, w).unwrap()
}

fn f64_config() -> KernelConfig {
    KernelConfig::new(32, 2, true, false, Precision::Double)
}

fn real_entries<T: Scalar>(store: &ElementMatrixStore<T>) -> Vec<T> {
    let kk = store.krows * store.krows;
    let mut out = Vec::with_capacity(store.num_elements * kk);
    for e in 0..store.num_elements {
        let start = store.element_index(e, 0, 0);
        out.extend_from_slice(&store.data[start..start + kk]);
    }
    out
}

fn verdict(ok: bool, lines: Vec<String>) -> Outcome {
    if ok {
        Ok(lines)
    } else {
        Err(lines)
    }
}

fn oracle_equivalence() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for dim in [2, 3] {
        for op in Operator::ALL {
            let prep = Prepared::from_mesh(op, jittered(dim)).unwrap();
            for precision in [Precision::Double, Precision::Single] {
                let cfg = KernelConfig::new(32, 2, true, false, precision);
                let tol = default_tolerance(precision);
                let r = match precision {
                    Precision::Double => prep.verify::<f64>(&cfg, tol),
                    Precision::Single => prep.verify::<f32>(&cfg, tol),
                }
                .unwrap();
                ok &= r.passed;
                lines.push(format!(
                    "{op} {dim}D {precision} ({} elements): max rel {:.3e} (limit {tol:e}) at element {} entry {:?}; \
                     max abs {:.3e}, max scaled {:.3e} -> {}",
                    prep.mesh.num_elements(),
                    r.max_rel_error,
                    r.worst_element,
                    r.worst_entry,
                    r.max_abs_error,
                    r.max_scaled_error,
                    if r.passed { "ok" } else { "over" }
                ));
            }
        }
    }
    verdict(ok, lines)
}

fn known_matrix() -> Outcome {
    let mesh = Mesh::new(
        2,
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0, 1, 2]],
    )
    .unwrap();
    let spec = FormSpec::new(Operator::Laplacian, 2).unwrap();
    let want = [1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5];
    let mut ok = true;
    let mut lines = Vec::new();
    for bs in [1, 2, 8] {
        for interleave in [false, true] {
            for unroll in [false, true] {
                let cfg = KernelConfig::new(bs, 1, interleave, unroll, Precision::Double);
                let got = run::<f64>(&mesh, &spec, &cfg, None)
                    .element_matrix(0)
                    .unwrap();
                if got != want {
                    ok = false;
                    lines.push(format!("{cfg}: {got:?}"));
                }
            }
        }
    }
    lines.push(format!("12 variants compared bitwise against {want:?}"));
    verdict(ok, lines)
}

fn variant_grid(precision: Precision) -> Vec<KernelConfig> {
    let mut out = Vec::new();
    for bs in [16, 32, 64, 128] {
        for ce in [1, 2, 4] {
            for is in [false, true] {
                for unroll in [false, true] {
                    let c = KernelConfig::new(bs, ce, is, unroll, precision);
                    if c.validate().is_ok() {
                        out.push(c);
                    }
                }
            }
        }
    }
    out
}

fn invariance_for<T: Scalar + PartialEq>(
    prep: &Prepared,
    precision: Precision,
) -> (usize, Vec<String>) {
    let mut reference: Option<Vec<T>> = None;
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for cfg in variant_grid(precision) {
        for workers in [1, 4] {
            let store = with_workers(workers, || prep.integrate::<T>(&cfg))
                .unwrap()
                .unwrap();
            let entries = real_entries(&store);
            runs += 1;
            match &reference {
                None => reference = Some(entries),
                Some(r) => {
                    // compare bit patterns so that -0.0 vs 0.0 or NaN would count
                    let same = r.len() == entries.len()
                        && r.iter()
                            .zip(&entries)
                            .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
                    if !same {
                        mismatches.push(format!(
                            "{} {}D {cfg} workers={workers}",
                            prep.spec.operator, prep.mesh.dim
                        ));
                    }
                }
            }
        }
    }
    (runs, mismatches)
}

fn variant_invariance() -> Outcome {
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for dim in [2, 3] {
        let mesh = jittered(dim);
        for op in Operator::ALL {
            let prep = Prepared::from_mesh(op, mesh.clone()).unwrap();
            for precision in [Precision::Single, Precision::Double] {
                let (runs, m) = match precision {
                    Precision::Single => invariance_for::<f32>(&prep, precision),
                    Precision::Double => invariance_for::<f64>(&prep, precision),
                };
                lines.push(format!(
                    "{op} {dim}D {precision}: {runs} runs, {} mismatches",
                    m.len()
                ));
                bad.extend(m);
            }
        }
    }
    let ok = bad.is_empty();
    lines.extend(bad);
    verdict(ok, lines)
}

fn null_spaces() -> Outcome {
    let mut worst_row: f64 = 0.0;
    let mut worst_translation: f64 = 0.0;
    for dim in [2, 3] {
        let mesh = jittered(dim);
        let lap = FormSpec::new(Operator::Laplacian, dim).unwrap();
        let store = run::<f64>(&mesh, &lap, &f64_config(), None);
        let n = lap.krows();
        for e in 0..mesh.num_elements() {
            let a = store.element_matrix(e).unwrap();
            for i in 0..n {
                worst_row = worst_row.max(a[i * n..(i + 1) * n].iter().sum::<f64>().abs());
            }
        }
        let el = FormSpec::new(Operator::Elasticity, dim).unwrap();
        let store = run::<f64>(&mesh, &el, &f64_config(), None);
        let (n, nb) = (el.krows(), el.num_basis_funcs);
        for e in 0..mesh.num_elements() {
            let a = store.element_matrix(e).unwrap();
            for c in 0..dim {
                // t_c: unit displacement of component c at every vertex
                for i in 0..n {
                    let s: f64 = (0..nb).map(|v| a[i * n + v + c * nb]).sum();
                    worst_translation = worst_translation.max(s.abs());
                }
            }
        }
    }
    let ok = worst_row <= 1e-12 && worst_translation <= 1e-12;
    verdict(
        ok,
        vec![format!(
            "max |Laplacian row sum| {worst_row:.3e}, max |A t| over translations {worst_translation:.3e} (limit 1e-12)"
        )],
    )
}

fn reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for dim in [2, 3] {
        let mesh = jittered(dim);
        let plain = run::<f64>(
            &mesh,
            &FormSpec::new(Operator::Laplacian, dim).unwrap(),
            &f64_config(),
            None,
        );
        let ones = CoefficientField::constant(&mesh, 1.0);
        let weighted = run::<f64>(
            &mesh,
            &FormSpec::new(Operator::WeightedLaplacian, dim).unwrap(),
            &f64_config(),
            Some(&ones),
        );
        let mut here: f64 = 0.0;
        for (a, b) in real_entries(&plain).iter().zip(&real_entries(&weighted)) {
            here = here.max((a - b).abs());
        }
        lines.push(format!(
            "{dim}D, {} elements: max |difference| {here:.3e}",
            mesh.num_elements()
        ));
        worst = worst.max(here);
    }
    verdict(worst <= 1e-12, lines)
}

fn layout_golden() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };

    // geometry: 19 synthetic tensors in batches of 8, last batch padded with element 18
    for dim in [2, 3] {
        let (bs, ne) = (8, 19);
        let tensors: Vec<Vec<f64>> = (0..ne)
            .map(|e| (0..dim * dim).map(|m| (100 * e + m) as f64).collect())
            .collect();
        let packed = pack_tensors::<f64>(dim, &tensors, bs).unwrap();
        check(
            packed.num_batches == 3 && packed.data.len() == 3 * bs * dim * dim,
            format!("{dim}D packed length"),
        );
        for g in 0..3 {
            check(
                packed.goffset(g) == g * dim * dim * bs,
                format!("{dim}D Goffset({g})"),
            );
            for local in 0..bs {
                let src = (g * bs + local).min(ne - 1);
                for m in 0..dim * dim {
                    let at = g * dim * dim * bs + local * dim * dim + m;
                    check(
                        packed.index(g, local, m / dim, m % dim) == at
                            && packed.data[at] == tensors[src][m],
                        format!("{dim}D geometry batch {g} element {local} entry {m}"),
                    );
                }
            }
        }
    }

    // analytic tensor blocks
    for op in Operator::ALL {
        for dim in [2, 3] {
            let spec = FormSpec::new(op, dim).unwrap();
            let k = build_k(&spec).unwrap();
            let (d2, n, nc) = (dim * dim, spec.krows(), spec.num_coefficients());
            for i in 0..n {
                for j in 0..n {
                    let kidx = i + j * n;
                    for c in 0..nc {
                        check(
                            k.koffset(kidx, c) == (kidx * nc + c) * d2,
                            format!("{op} {dim}D Koffset({kidx},{c})"),
                        );
                    }
                    check(
                        k.block(i, j) == &k.blocks[kidx * nc * d2..kidx * nc * d2 + d2],
                        format!("{op} {dim}D block({i},{j})"),
                    );
                }
            }
        }
    }

    // element matrices: the engine's padded final batch holds nothing extra,
    // and every element reads back at the formula's offset
    let mesh = jitter_mesh(&structured_simplicial_mesh(2, 5).unwrap(), JITTER, SEED).unwrap();
    let spec = FormSpec::new(Operator::Elasticity, 2).unwrap();
    let ne = mesh.num_elements();
    let single = run::<f64>(
        &mesh,
        &spec,
        &KernelConfig::new(1, 1, false, false, Precision::Double),
        None,
    );
    for (bs, ce) in [(8, 2), (16, 4), (64, 1)] {
        let cfg = KernelConfig::new(bs, ce, true, true, Precision::Double);
        let store = run::<f64>(&mesh, &spec, &cfg, None);
        let n = spec.krows();
        check(
            !ne.is_multiple_of(bs) && store.num_batches == ne.div_ceil(bs),
            format!("bs={bs} has a padded final batch"),
        );
        for g in 0..store.num_batches {
            check(
                store.eoffset(g) == g * n * n * bs,
                format!("Eoffset({g}) bs={bs}"),
            );
        }
        for e in 0..ne {
            let (g, local) = (e / bs, e % bs);
            let (b, z) = (local / ce, local % ce);
            for i in 0..n {
                for j in 0..n {
                    let flat = g * n * n * bs + b * ce * n * n + z * n * n + i + j * n;
                    check(
                        store.data[flat] == single.data[e * n * n + i + j * n],
                        format!("bs={bs} ce={ce} element {e} entry ({i},{j})"),
                    );
                }
            }
        }
    }

    let ok = failures.is_empty();
    let mut lines = vec![format!("{} layout checks failed", failures.len())];
    lines.extend(failures.into_iter().take(10));
    verdict(ok, lines)
}

fn scaling_law() -> Outcome {
    let mut worst_g: f64 = 0.0;
    let mut worst_a: f64 = 0.0;
    let mut lines = Vec::new();
    for dim in [2, 3] {
        let factor = if dim == 3 { 2.0 } else { 1.0 };
        let mesh = jittered(dim);
        let big = mesh.scaled(2.0);
        let (g0, g1) = (
            geometry_tensors(&mesh).unwrap(),
            geometry_tensors(&big).unwrap(),
        );
        let mut dg: f64 = 0.0;
        for (a, b) in g0.iter().flatten().zip(g1.iter().flatten()) {
            dg = dg.max((b - factor * a).abs());
        }
        let mut da: f64 = 0.0;
        for op in [Operator::Laplacian, Operator::Elasticity] {
            let spec = FormSpec::new(op, dim).unwrap();
            let a0 = real_entries(&run::<f64>(&mesh, &spec, &f64_config(), None));
            let a1 = real_entries(&run::<f64>(&big, &spec, &f64_config(), None));
            for (a, b) in a0.iter().zip(&a1) {
                da = da.max((b - factor * a).abs());
            }
        }
        lines.push(format!(
            "{dim}D (expected factor {factor}): max |G' - cG| {dg:.3e}, max |A' - cA| {da:.3e}"
        ));
        worst_g = worst_g.max(dg);
        worst_a = worst_a.max(da);
    }
    verdict(worst_g <= 1e-12 && worst_a <= 1e-12, lines)
}

fn sweep_cli() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_batchfem"))
        .args([
            "sweep",
            "--operator",
            "laplacian",
            "--dim",
            "3",
            "--n",
            "32",
            "--precision",
            "f32",
            "--reps",
            "3",
        ])
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    let elapsed = start.elapsed();
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    let header_ok = text.lines().next() == Some(CSV_HEADER);
    let records = read_csv(text.as_bytes()).unwrap_or_default();
    let all_ok = records.iter().all(|r| r.status == STATUS_OK);
    let sums: Vec<f64> = records.iter().filter_map(|r| r.checksum).collect();
    let uniform = !sums.is_empty() && sums.iter().all(|s| s.to_bits() == sums[0].to_bits());
    let elements = records.first().map_or(0, |r| r.num_elements);
    let best = records.iter().filter_map(|r| r.gflops).fold(0.0, f64::max);
    let ok = status.success()
        && header_ok
        && records.len() >= 64
        && all_ok
        && sums.len() == records.len()
        && uniform
        && elapsed < Duration::from_secs(600);
    verdict(
        ok,
        vec![format!(
            "exit {:?}, {} rows over {elements} elements, header {}, all ok {all_ok}, checksums uniform {uniform}, \
             {:.1}s (limit 600s), best {best:.2} GF/s",
            status.code(),
            records.len(),
            if header_ok { "exact" } else { "wrong" },
            elapsed.as_secs_f64()
        )],
    )
}

fn engine_vs_oracle() -> Outcome {
    let mesh = jittered(3);
    let spec = FormSpec::new(Operator::Laplacian, 3).unwrap();
    let cfg = f64_config();
    let best = |f: &mut dyn FnMut()| -> f64 {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut sink = 0.0;
    // engine timing includes building K, specializing and packing
    let engine = with_workers(1, || {
        best(&mut || sink += run::<f64>(&mesh, &spec, &cfg, None).checksum())
    })
    .unwrap();
    let oracle = best(&mut || {
        for e in 0..mesh.num_elements() {
            sink += assemble_element_direct(&spec, &mesh.cell_vertices(e), None).unwrap()[0];
        }
    });
    let ratio = oracle / engine;
    verdict(
        ratio >= 2.0 && sink.is_finite(),
        vec![format!(
            "{} tetrahedra, one worker: engine {:.3} ms, oracle {:.3} ms, speed-up {ratio:.1}x (floor 2x)",
            mesh.num_elements(),
            engine * 1e3,
            oracle * 1e3
        )],
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 reference-triangle stiffness matrix", known_matrix),
        ("3 variant and worker invariance", variant_invariance),
        ("4 null spaces", null_spaces),
        ("5 unit weight reduces to Laplacian", reduction),
        ("6 layout golden tests", layout_golden),
        ("7 geometry scaling law", scaling_law),
        ("8a sweep CLI at ~200k elements", sweep_cli),
        ("8b engine vs oracle throughput", engine_vs_oracle),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let (pass, lines) = match f() {
            Ok(l) => (true, l),
            Err(l) => (false, l),
        };
        println!("criterion {name}: {}", if pass { "PASS" } else { "FAIL" });
        for l in lines {
            println!("    {l}");
        }
        failed += usize::from(!pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
