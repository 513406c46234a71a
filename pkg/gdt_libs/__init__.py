# gdt_libs/__init__.py

from . import (
    checkpoint_io,
    conditioning,
    config,
    diffusion_process,
    errors,
    gdt_model,
    group_attention,
    image_tools,
    metrics_module,
    synthetic_groups,
    tensor_engine,
    trainer,
)

__all__ = [
    "checkpoint_io", "conditioning", "config", "diffusion_process", "errors", "gdt_model",
    "group_attention", "image_tools", "metrics_module", "synthetic_groups", "tensor_engine", "trainer",
]
