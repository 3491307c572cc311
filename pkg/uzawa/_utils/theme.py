from matplotlib.axes import Axes

PALETTE: list[str] = [
    "#855C75FF",
    "#D9AF6BFF",
    "#AF6458FF",
    "#736F4CFF",
    "#526A83FF",
    "#625377FF",
    "#68855CFF",
    "#9C9C5EFF",
    "#A06177FF",
    "#8C785DFF",
    "#467378FF",
    "#7C7C7CFF",
]


def _get_first_n_colors(colors: list[str] | None, n: int) -> list[str]:
    if colors is None:
        return [PALETTE[i % len(PALETTE)] for i in range(n)]
    if len(colors) < n:
        raise ValueError(
            f"`colors` argument must have at least {n} elements, not {len(colors)}"
        )
    return colors


def _themify(ax: Axes) -> Axes:
    """
    Apply the package theme to a matplotlib Axes.

    Args:
        ax: The matplotlib Axes to which you want to apply the theme.

    Returns:
        The matplotlib Axes.
    """
    ax.grid(color="#525252", alpha=0.2, zorder=-5)
    ax.spines[["top", "right", "left", "bottom"]].set_visible(False)
    ax.tick_params(size=0, labelsize=8)
    return ax
