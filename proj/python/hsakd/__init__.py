"""Python bindings for the hsakd distillation engine."""

from ._hsakd import (
    Checkpoint,
    ConfigError,
    ContractError,
    Dataset,
    DimensionError,
    Error,
    FormatError,
    NumericError,
    SplitTag,
    ce_sad,
    cli_main,
    config_text,
    cross_entropy,
    evaluate,
    few_shot_split,
    joint_label,
    kd_kl_loss,
    load_checkpoint,
    loss_kl_p,
    loss_kl_q,
    read_dataset,
    rotate_quarter,
    save_checkpoint,
    split_label,
    synth_generate,
    train_student,
    train_teacher,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
