//! Accuracy metrics and a linear SVM on raw spectra.

use cassi_ccnn::datacube::{generate_synthetic_scene, split_train_test};
use cassi_ccnn::evalbench::{confusion, metrics, svm_predict, svm_train, ConfusionMatrix, SvmConfig};

fn main() -> cassi_ccnn::Result<()> {
    let r = metrics(&ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]])?)?;
    println!("[[8,2],[1,9]]: OA {:.2}, AA {:.2}, kappa {:.2}", r.oa, r.aa, r.kappa);

    let (cube, labels) = generate_synthetic_scene(32, 32, 8, 4, 2)?;
    let cube = cube.normalized();
    let split = split_train_test(&labels, 0.3, 2)?;
    let features = |px: &[(usize, usize)]| px.iter().map(|&(x, y)| cube.spectrum(x, y)).collect::<Vec<_>>();
    let classes = |px: &[(usize, usize)]| px.iter().map(|&(x, y)| labels.get(x, y)).collect::<Vec<_>>();
    let model = svm_train(&features(&split.train), &classes(&split.train), &SvmConfig::default())?;
    let pred = features(&split.test).iter().map(|f| svm_predict(&model, f)).collect::<cassi_ccnn::Result<Vec<_>>>()?;
    let r = metrics(&confusion(&classes(&split.test), &pred, labels.classes())?)?;
    println!("pixel SVM: OA {:.4}, AA {:.4}, kappa {:.4}", r.oa, r.aa, r.kappa);
    for row in r.confusion.rows() {
        println!("  {row:?}");
    }
    Ok(())
}
