"""
SVG rendering of region atlases over an output heatmap.
"""
import io
import logging
from pathlib import Path
from typing import Callable, Optional, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Polygon

from ..models.network import Network
from .region_explorer import RegionAtlas

logger = logging.getLogger(__name__)

SVG_HASHSALT = "reluopt"


def _background_values(background: Union[Network, Callable], box: np.ndarray, resolution: int) -> np.ndarray:
    xs = np.linspace(box[0, 0], box[0, 1], resolution)
    ys = np.linspace(box[1, 0], box[1, 1], resolution)
    grid_x, grid_y = np.meshgrid(xs, ys)
    if isinstance(background, Network):
        points = np.column_stack([grid_x.ravel(), grid_y.ravel()])
        return background.forward(points)[:, 0].reshape(grid_x.shape)
    return np.asarray(background(grid_x, grid_y), dtype=np.float64)


def render_svg(
    atlas: RegionAtlas,
    background: Optional[Union[Network, Callable]] = None,
    path: Optional[Union[str, Path]] = None,
    resolution: int = 200,
    title: Optional[str] = None,
) -> str:
    """
    Draw every region outline over a raster of the network (or function) output.

    Args:
        atlas: Complete or partial atlas
        background: Network (first output) or f(x, y); omitted -> no heatmap
        path: Optional output file
        resolution: Heatmap samples per axis
        title: Optional axes title

    Returns:
        SVG document; each region is a group with id ``region-<pattern hex>``
    """
    box = atlas.box
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot(1, 1, 1)
    if background is not None:
        values = _background_values(background, box, resolution)
        image = ax.imshow(values, origin="lower", extent=(box[0, 0], box[0, 1], box[1, 0], box[1, 1]),
                          cmap="viridis", aspect="auto", interpolation="nearest")
        fig.colorbar(image, ax=ax, shrink=0.8)

    for region in atlas.regions:
        ax.add_patch(Polygon(region.vertices, closed=True, fill=False, edgecolor="black", linewidth=0.4,
                             gid=f"region-{region.pattern.hex()}"))

    ax.set_xlim(box[0, 0], box[0, 1])
    ax.set_ylim(box[1, 0], box[1, 1])
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    suffix = " (incomplete)" if atlas.incomplete else ""
    ax.set_title(title or f"{atlas.region_count} linear regions{suffix}")

    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASHSALT, "svg.fonttype": "path"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    svg = buffer.getvalue()

    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg)
        logger.info(f"Wrote region map to {path}")
    return svg
