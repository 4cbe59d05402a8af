"""Python bindings for vlime: LIME-style heatmaps for embedding models, plus
the verification, fusion and ablation tooling around them.

Images are numpy uint8 arrays of shape (H, W) or (H, W, C); heatmaps are
float64 arrays of shape (H, W).
"""

from ._core import (
    DataError,
    Embedder,
    EmbedderError,
    NumericalError,
    PythonEmbedder,
    __version__,
    average_heatmaps,
    blackout_above_threshold,
    cosine_similarity,
    eer,
    explain,
    explain_scalar,
    fit_weighted_ridge,
    flip_horizontal,
    fuse_scores,
    fusion_sweep,
    gaussian_smooth,
    make_embedder,
    normalize_01,
    psnr,
    random_blackout,
    read_heatmap,
    read_image,
    run_cli,
    sample_masks,
    slic,
    write_heatmap,
    write_image,
)

__all__ = [name for name in dir() if not name.startswith("_")]
