"""Hidden-state patching, contrastive logit recalibration and layer selection."""

from ._faithscope import (  # noqa: F401
    __version__,
    BalorConfig,
    BiasRig,
    Datapoint,
    Error,
    ModelBundle,
    ModelConfig,
    PatchPlan,
    Tokenizer,
    assign_attributes,
    bias_split,
    build_contrastive_tokens,
    compute_gsa_with_probe,
    compute_ld,
    compute_sr,
    contains_word,
    decode,
    flip_threshold,
    forward,
    load_bundle,
    log_odds_decomposition,
    logit_lens,
    make_plan,
    make_toy_model,
    recalibrate,
    render_prompts,
    run_cli,
    run_method,
    run_patched,
    save_bundle,
    scan_corpus,
    scan_layers,
    select_layer,
    stats,
    toy_config,
    toy_tokenizer,
    train_probe,
)
