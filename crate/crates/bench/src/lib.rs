//! Fixtures shared by the criterion benches under `benches/`.

use texcamo_core::renderer::{backprop_to_texture, render_view};
use texcamo_core::scene::{load_obj, pose_grid};
use texcamo_core::{Background, Mesh, Surrogate, Texture, TrainConfig, TrainableMask, ViewGrad};

pub fn car() -> Mesh {
    load_obj(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/car.obj")).expect("bundled mesh loads")
}

/// Raw (uncalibrated) gradients of `k` views spread over the default training
/// grid, for a gray texture under `mask`.
pub fn view_gradients(mesh: &Mesh, mask: &TrainableMask, image: usize, k: usize) -> Vec<ViewGrad> {
    let cfg = TrainConfig::default();
    let poses = pose_grid(&cfg.grid, cfg.fov_deg, image, image).expect("default grid is valid");
    let tex = Texture::uniform([0.5; 3], mask.clone());
    let sur = Surrogate::new(0);
    let bg = Background::default().render(image, image);
    let stride = poses.len() / k;
    (0..k)
        .map(|i| {
            let (map, img) = render_view(mesh, &tex, &poses[i * stride], &bg).expect("render");
            let (score, cache) = sur.forward(&img).expect("forward");
            let grad = backprop_to_texture(&sur.backward(&cache).expect("backward"), &map).expect("scatter");
            ViewGrad {
                loss: score,
                grad: grad.masked(mask),
                view_index: i,
            }
        })
        .collect()
}
