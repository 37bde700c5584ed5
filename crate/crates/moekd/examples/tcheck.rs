use moekd::checkpoint;
use moekd_core::pipeline::TeacherRecipe;
fn main() {
    let out = TeacherRecipe::standard(0).train().unwrap();
    let loaded = checkpoint::load(std::path::Path::new("/tmp/teacher.ckpt")).unwrap();
    println!("hash mem {} ", checkpoint::hash(&out.model));
    println!("eq {}", out.model == loaded);
    let rt = checkpoint::from_bytes(&checkpoint::to_bytes(&out.model)).unwrap();
    println!("rt eq {}", rt == out.model);
    println!("{:?}\n{:?}", out.model.config, loaded.config);
}
