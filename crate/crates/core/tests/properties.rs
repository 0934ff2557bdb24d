use nalgebra::DMatrix;

use koopfuse_core::dictionary::{Dictionary, Mlp};

mod props;

macro_rules! suites {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                props::$name().unwrap();
            }
        )*
    };
}

suites!(
    dmd_recovers_linear_maps,
    modal_decomposition_reconstructs,
    affine_transform_commutes_with_prediction,
    transformed_operator_has_exact_unit_eigenvalue,
    output_conjugacy_identities,
    observable_split_recovers_planted_blocks,
    similarity_preserves_spectrum,
    sequential_blocks_are_exact_and_feasible,
    dictionary_gradients_match_finite_differences,
    delay_embedding_matches_enumeration,
);

#[test]
fn suite_list_is_complete() {
    assert_eq!(props::ALL.len(), 10);
}

#[test]
fn mlp_gradient_handles_all_zero_cotangent() {
    let m = Mlp::seeded(vec![2, 3, 1], 1).unwrap();
    let d = Dictionary::Neural(m);
    let g = d.param_gradient(&DMatrix::from_element(2, 3, 0.5), &DMatrix::zeros(1, 3)).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}
