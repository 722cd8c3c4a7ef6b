use nlos_core::scene::SceneConfig;
use nlos_core::datastore::sample_training_object;
use nlos_core::rng::derive_seed;

fn main() {
    let cfg = SceneConfig::default();
    for id in 0..400u64 {
        let seed = derive_seed(1, id);
        let scene = cfg.sample(seed).unwrap();
        let obj = sample_training_object(&scene, seed);
        if let Err(e) = obj.validate_in(&scene) {
            println!("id {id}: class {:?} pos ({:.4},{:.4}) yaw {:.4} -> {e}", obj.class, obj.x, obj.y, obj.yaw);
            println!("   corners: {:?}", obj.base_corners());
        }
    }
    println!("done");
}
