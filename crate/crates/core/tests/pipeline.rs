use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texcamo_core::optim::{coverage_report, initial_texture, train, TrainConfig};
use texcamo_core::renderer::{backprop_to_texture, render_view};
use texcamo_core::scene::{load_obj, make_pose};
use texcamo_core::surrogate::{detection_score_sweep, mean_score};
use texcamo_core::{Background, Mesh, PoseGrid, SearchRadius, Surrogate, Texture, TextureDims, TrainableMask};

fn car() -> Mesh {
    load_obj(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/car.obj")).unwrap()
}

#[test]
fn texture_gradient_matches_finite_differences() {
    let mesh = car();
    let dims = TextureDims::new(64, 64).unwrap();
    let mask = TrainableMask::from_uv_charts(&mesh, dims).unwrap();
    let tex = Texture::seeded(mask, 3);
    let sur = Surrogate::new(42);
    let bg = Background::default().render(48, 48);
    let pose = make_pose(35.0, 20.0, 6.0, 60.0, 48, 48).unwrap();

    let (map, img) = render_view(&mesh, &tex, &pose, &bg).unwrap();
    let (_, cache) = sur.forward(&img).unwrap();
    let grad = backprop_to_texture(&sur.backward(&cache).unwrap(), &map).unwrap();
    let sampled = map.sampled_texels();
    assert!(sampled.len() > 100);

    let loss = |t: &Texture| {
        let (_, img) = render_view(&mesh, t, &pose, &bg).unwrap();
        sur.forward(&img).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-3;
    let mut checked = 0;
    while checked < 30 {
        let id = *sampled.choose(&mut rng).unwrap();
        let c = rng.random_range(0..3);
        let v = tex.texel(id)[c];
        let mut plus = tex.clone();
        plus.set_channel(id, c, v + h);
        let mut minus = tex.clone();
        minus.set_channel(id, c, v - h);
        let (fp, cp) = loss(&plus);
        let (fm, cm) = loss(&minus);
        if cp.gate_pattern() != cm.gate_pattern() {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let an = grad.get(id)[c];
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        assert!(err < 1e-3, "texel {id} ch {c}: fd {fd} analytic {an}");
        checked += 1;
    }
}

#[test]
fn distance_sparsity_and_calibrated_coverage() {
    let mesh = car();
    let dims = TextureDims::new(64, 64).unwrap();
    let mask = TrainableMask::from_uv_charts(&mesh, dims).unwrap();
    let tex = Texture::uniform([0.5; 3], mask);
    let poses = [5.0, 15.0].map(|d| make_pose(45.0, 15.0, d, 60.0, 64, 64).unwrap());
    let rows = coverage_report(&mesh, &tex, &poses, SearchRadius::new(8.0).unwrap()).unwrap();
    assert_eq!(rows[0].distance_m, 5.0);
    assert!(rows[1].sampled < rows[0].sampled);
    assert!(rows[1].calibrated > rows[1].sampled);
    assert!(rows[1].calibrated_ratio() <= 1.0);
}

#[test]
fn reference_run_loss_does_not_rise_and_beats_gray() {
    let mesh = car();
    let dims = TextureDims::new(64, 64).unwrap();
    let mask = TrainableMask::from_uv_charts(&mesh, dims).unwrap();
    let sur = Surrogate::new(0);
    let config = TrainConfig {
        epochs: 2,
        seed: 1,
        image_w: 64,
        image_h: 64,
        tau: SearchRadius::new(2.0).unwrap(),
        ..TrainConfig::default()
    };
    assert_eq!(config.grid.len(), 360);
    let out = train(&mesh, &sur, &mask, &config).unwrap();
    let epochs = out.epoch_losses();
    assert_eq!(epochs.len(), 2);
    assert!(epochs[1] <= epochs[0], "{epochs:?}");

    let eval = PoseGrid::new(vec![0.0, 20.0, 45.0], 30.0, vec![5.0, 10.0, 15.0]).unwrap();
    let poses = texcamo_core::scene::pose_grid(&eval, 60.0, 64, 64).unwrap();
    let gray = Texture::uniform([0.5; 3], mask.clone());
    let init = initial_texture(&mask, 1);
    let trained = mean_score(&detection_score_sweep(&sur, &mesh, &out.texture, &poses, &config.background).unwrap());
    let gray = mean_score(&detection_score_sweep(&sur, &mesh, &gray, &poses, &config.background).unwrap());
    let init = mean_score(&detection_score_sweep(&sur, &mesh, &init, &poses, &config.background).unwrap());
    assert!(trained < gray && trained < init, "trained {trained} gray {gray} init {init}");
}
