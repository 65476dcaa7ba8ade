from .file_utils import (
    OUTPUT_DIR,
    ALLOWED_FORMATS,
    ensure_output_dir,
    generate_run_id,
    get_run_dir,
    validate_format,
    resolve_n_jobs,
    write_records,
    format_duration
)
from .config import ModelKind, ExperimentConfig, CommandSpec, parse_delta_list, load_experiment_config
