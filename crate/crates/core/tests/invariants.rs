use dpp_transfer::countlaw::{joint_law, joint_law_matrix, tv_distance};
use dpp_transfer::kernel::presets::*;
use dpp_transfer::kernel::{Point, DEFAULT_DEGREE};
use dpp_transfer::linalg::jacobi_eigen;
use dpp_transfer::tail::{
    conditional_kernel, conditional_law, l_ensemble_enumerate, near_count_law, ConditionMethod,
};
use dpp_transfer::transference::{build_cell_bases, build_transfer, transfer};
use dpp_transfer::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_partition(m: usize) -> Partition {
    Partition::uniform(GroundSpace::unit_interval(), m).unwrap()
}

/// Random orthogonal matrix as a product of Householder reflections.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::eye(n);
    for _ in 0..n {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nn: f64 = v.iter().map(|x| x * x).sum();
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            f64::from(u8::from(i == j)) - 2.0 * v[i] * v[j] / nn
        });
        q = q.dot(&h);
    }
    q
}

#[test]
fn jacobi_recovers_planted_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut planted: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let u = random_orthogonal(8, &mut rng);
        let a = u.dot(&Array2::from_diag(&ndarray::Array1::from(planted.clone()))).dot(&u.t());
        let a = (&a + &a.t()) * 0.5;
        let eig = jacobi_eigen(&a).unwrap();
        planted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in eig.values.iter().zip(&planted) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        // A v = λ v for every returned pair
        for k in 0..8 {
            let v = eig.vectors.column(k);
            let av = a.dot(&v);
            for i in 0..8 {
                assert!((av[i] - eig.values[k] * v[i]).abs() < 1e-8);
            }
        }
    }
}

fn continuous_presets() -> Vec<SpectralKernel> {
    vec![
        constant_rank1(),
        fourier_projection(3, DEFAULT_DEGREE).unwrap(),
        fourier_spectral(&[0.9, 0.6, 0.3], DEFAULT_DEGREE).unwrap(),
        legendre_spectral(&[0.95, 0.7, 0.4, 0.1]).unwrap(),
    ]
}

#[test]
fn transfer_map_preserves_inner_products_and_transports_eigenvectors() {
    for k in continuous_presets() {
        for m in [2, 3, 4] {
            let p = unit_partition(m);
            let bases = build_cell_bases(&k, &p, 1e-10).unwrap();
            let t = build_transfer(&k, &bases).unwrap();
            let gram = t.matrix.t().dot(&t.matrix);
            for i in 0..k.rank() {
                for j in 0..k.rank() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - want).abs() < 1e-9);
                }
            }
            let q = transfer(&k, &t, 1e-10).unwrap();
            let qt = q.q.dot(&t.matrix);
            for c in 0..k.rank() {
                for row in 0..q.size() {
                    assert!((qt[[row, c]] - k.eigenvalues()[c] * t.matrix[[row, c]]).abs() < 1e-9);
                }
            }
            if k.is_projection() {
                let q2 = q.q.dot(&q.q);
                assert!((&q2 - &q.q).iter().all(|d| d.abs() < 1e-9));
            }
        }
    }
}

#[test]
fn transferred_kernel_is_a_contraction_and_interlaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in continuous_presets() {
        let p = unit_partition(3);
        let q = transferred(&k, &p);
        let n = q.size();
        for _ in 0..1000 {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let v = ndarray::Array1::from(v);
            let quad = v.dot(&q.q.dot(&v));
            let norm = v.dot(&v);
            assert!(quad >= -1e-12 && quad <= norm + 1e-12);
        }
        let full = jacobi_eigen(&q.q).unwrap().values;
        for (b, cell) in q.block_cells().iter().enumerate() {
            let idx = cell.site_list();
            let sub = Array2::from_shape_fn((idx.len(), idx.len()), |(i, j)| q.q[[idx[i], idx[j]]]);
            let part = jacobi_eigen(&sub).unwrap().values;
            let (nn, mm) = (n, idx.len());
            for (i, mu) in part.iter().enumerate() {
                assert!(*mu <= full[i] + 1e-10, "block {b}");
                assert!(*mu >= full[i + nn - mm] - 1e-10, "block {b}");
            }
            // block spectrum equals the compression of K to the cell
            let comp = k.compress(&p.cells()[b]).unwrap().eigenvalues().unwrap();
            for (x, y) in part.iter().zip(&comp) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

fn transferred(k: &SpectralKernel, p: &Partition) -> TransferredKernel {
    transference::transfer_partition(k, p, 1e-10).unwrap()
}

#[test]
fn intensity_determinants_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in continuous_presets() {
        for n in 1..=5 {
            let pts: Vec<Point> = (0..n).map(|_| Point::Real(rng.random::<f64>())).collect();
            assert!(k.intensity_determinant(&pts).unwrap().value >= -1e-12);
        }
    }
}

#[test]
fn merge_marginal_and_total_are_consistent() {
    let k = fourier_spectral(&[0.9, 0.6, 0.3], DEFAULT_DEGREE).unwrap();
    let p = unit_partition(4);
    let law = joint_law(&k, p.cells()).unwrap();
    let coarse = p.cells().chunks(2).map(|c| Cell::union(c).unwrap()).collect::<Vec<_>>();
    let direct = joint_law(&k, &coarse).unwrap();
    let merged = law.merge(&[vec![0, 1], vec![2, 3]]).unwrap();
    assert!(tv_distance(&direct, &merged).unwrap() < 1e-9);
    let whole = joint_law(&k, &[GroundSpace::unit_interval().whole()]).unwrap();
    assert!(tv_distance(&whole, &law.total().unwrap()).unwrap() < 1e-9);
    let single = joint_law(&k, &p.cells()[2..3]).unwrap();
    assert!(tv_distance(&single, &law.marginal(2).unwrap()).unwrap() < 1e-9);
}

#[test]
fn pgf_law_matches_l_ensemble() {
    for (n, b) in [(6, 0.3), (9, 0.5), (12, 0.3)] {
        let m = discretized_sine_matrix(n, b).unwrap();
        let k = SpectralKernel::from_matrix(&m).unwrap();
        let blocks: Vec<Cell> = (0..3).map(|i| Cell::sites((i * n / 3..(i + 1) * n / 3).collect()).unwrap()).collect();
        let exact = joint_law(&k, &blocks).unwrap();
        let table = l_ensemble_enumerate(&m).unwrap().count_law(&blocks).unwrap();
        for (c, p) in table.atoms() {
            assert!((exact.prob(&c) - p).abs() < 1e-9, "{c:?}");
        }
    }
}

#[test]
fn sampler_is_simple_with_correct_marginals_and_covariances() {
    let q = discretized_sine_matrix(8, 0.4).unwrap();
    let sampler = DppSampler::new(&q).unwrap();
    let n = 100_000;
    let draws = sampler.sample_many(RngStream::new(21, 0), n);
    let mut occ = vec![0usize; 8];
    let mut both = 0usize;
    for d in &draws {
        assert!(d.is_simple());
        let PointConfiguration::Sites(s) = d else { panic!() };
        for &x in s {
            occ[x] += 1;
        }
        if s.contains(&2) && s.contains(&3) {
            both += 1;
        }
    }
    let nf = n as f64;
    for s in 0..8 {
        let p = q[[s, s]];
        let se = (p * (1.0 - p) / nf).sqrt();
        assert!((occ[s] as f64 / nf - p).abs() < 4.0 * se, "site {s}");
    }
    let (pa, pb) = (occ[2] as f64 / nf, occ[3] as f64 / nf);
    let cov = both as f64 / nf - pa * pb;
    let want = -q[[2, 3]].powi(2);
    // delta-method influence of each draw on the covariance estimate
    let z: Vec<f64> = draws
        .iter()
        .map(|d| {
            let PointConfiguration::Sites(s) = d else { panic!() };
            let (a, b) = (f64::from(u8::from(s.contains(&2))), f64::from(u8::from(s.contains(&3))));
            a * b - pb * a - pa * b
        })
        .collect();
    let zm = z.iter().sum::<f64>() / nf;
    let var = z.iter().map(|x| (x - zm).powi(2)).sum::<f64>() / (nf - 1.0);
    assert!((cov - want).abs() < 4.0 * (var / nf).sqrt(), "{cov} vs {want}");
}

#[test]
fn total_probability_over_far_configurations() {
    let k = discretized_sine_matrix(8, 0.35).unwrap();
    let table = l_ensemble_enumerate(&k).unwrap();
    let near = Cell::sites(vec![0, 1]).unwrap();
    let far = [5usize, 6, 7];
    let unconditional = near_count_law(&k, &[0, 1]).unwrap();
    let mut mixed = [0.0; 3];
    for pattern in 0u32..8 {
        let assignment: Vec<(usize, bool)> = far.iter().enumerate().map(|(i, &s)| (s, pattern >> i & 1 == 1)).collect();
        let weight: f64 = table
            .iter()
            .filter(|(m, _)| far.iter().enumerate().all(|(i, &s)| (m >> s & 1) == (pattern >> i & 1)))
            .map(|(_, p)| p)
            .sum();
        let c = conditional_law(&k, &assignment, &near, ConditionMethod::Exact).unwrap();
        for (i, m) in mixed.iter_mut().enumerate() {
            *m += weight * c.law.pmf[i];
        }
        // Schur route agrees with the renormalized table
        let occupied: Vec<usize> = assignment.iter().filter(|a| a.1).map(|a| a.0).collect();
        let empty: Vec<usize> = assignment.iter().filter(|a| !a.1).map(|a| a.0).collect();
        let (ck, rest) = conditional_kernel(&k, &occupied, &empty).unwrap();
        let pos: Vec<usize> = [0, 1].iter().map(|a| rest.iter().position(|x| x == a).unwrap()).collect();
        let schur = near_count_law(&ck, &pos).unwrap();
        for i in 0..3 {
            assert!((schur[i] - c.law.pmf[i]).abs() < 1e-9);
        }
    }
    for i in 0..3 {
        assert!((mixed[i] - unconditional[i]).abs() < 1e-9);
    }
}

#[test]
fn rejection_conditioning_matches_enumeration() {
    let k = ndarray::array![[0.5, 0.49], [0.49, 0.5]];
    let near = Cell::sites(vec![0]).unwrap();
    let exact = conditional_law(&k, &[(1, true)], &near, ConditionMethod::Exact).unwrap();
    let emp = conditional_law(
        &k,
        &[(1, true)],
        &near,
        ConditionMethod::Rejection {
            draws: 1_000_000,
            stream: RngStream::new(2, 0),
        },
    )
    .unwrap();
    let n = emp.n_accepted.unwrap() as f64;
    let p = exact.law.pmf[1];
    let se = (p * (1.0 - p) / n).sqrt();
    assert!((emp.law.pmf[1] - p).abs() < 4.0 * se);
    assert!(emp.acceptance_rate.unwrap() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_diag_laws_factorize(p in proptest::collection::vec(0.05f64..0.95, 2..6)) {
        let k = diag(&p).unwrap();
        let cells: Vec<Cell> = (0..p.len()).map(|i| Cell::Sites(vec![i])).collect();
        let law = joint_law(&k, &cells).unwrap();
        prop_assert!((law.total_mass() - 1.0).abs() < 1e-9);
        for (c, pr) in law.atoms() {
            let want: f64 = c.iter().zip(&p).map(|(&x, &q)| if x == 1 { q } else if x == 0 { 1.0 - q } else { 0.0 }).product();
            prop_assert!((pr - want).abs() < 1e-9);
        }
    }

    #[test]
    fn random_refinements_preserve_law(m in 2usize..4, factor in 2usize..3) {
        let k = fourier_spectral(&[0.8, 0.5], DEFAULT_DEGREE).unwrap();
        let coarse = unit_partition(m);
        let fine = coarse.refine(factor).unwrap();
        let parents = fine.parents_in(&coarse).unwrap();
        let groups: Vec<Vec<usize>> = (0..m).map(|c| (0..fine.len()).filter(|&i| parents[i] == c).collect()).collect();
        let merged = joint_law(&k, fine.cells()).unwrap().merge(&groups).unwrap();
        let direct = joint_law(&k, coarse.cells()).unwrap();
        prop_assert!(tv_distance(&merged, &direct).unwrap() < 1e-9);
        let q = transferred(&k, &fine);
        let via_q = joint_law_matrix(&q.q, &q.block_cells()).unwrap().merge(&groups).unwrap();
        prop_assert!(tv_distance(&via_q, &direct).unwrap() < 1e-8);
    }
}
