# utils/schedule_visualizer.py

from pathlib import Path
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from utils.run_log_visualizer import setup_korean_font, style_axis
from utils.schedule_calculator import ScheduleCalculator, ScheduleConfig

logger = logging.getLogger(__name__)

SINUSOIDAL_COLOR = '#2563EB'
EXPONENTIAL_COLOR = '#F59E0B'
GRID_POINT_COLOR = '#8B5CF6'


def schedule_frame(cfg: ScheduleConfig, points: int = 2001) -> pd.DataFrame:
    """k = 0..K 구간의 두 스케줄 M(k) 표 (K가 크면 균등 간격으로 추림)"""
    steps = np.unique(np.linspace(0, cfg.K, min(points, cfg.K + 1)).round().astype(int))
    sinusoidal = ScheduleConfig(cfg.s0, cfg.s1, cfg.K, 'sinusoidal')
    rows = {'step': steps, 'sinusoidal': [ScheduleCalculator.sinusoidal_steps(sinusoidal, int(k)) for k in steps]}
    if cfg.s1 // cfg.s0 >= 2:
        exponential = ScheduleConfig(cfg.s0, cfg.s1, cfg.K, 'exponential')
        rows['exponential'] = [ScheduleCalculator.exponential_steps(exponential, int(k)) for k in steps]
    else:
        logger.warning(f"s1//s0 < 2 이므로 지수 스케줄은 생략합니다 (s0={cfg.s0}, s1={cfg.s1})")
    return pd.DataFrame(rows)


def create_schedule_plot(cfg: ScheduleConfig, output_dir, sigma_min: float = 0.002, sigma_max: float = 80.0,
                         rho: float = 7.0) -> list[Path]:
    """M(k) 곡선(사인/지수)과 최종 σ 격자를 PNG + CSV로 남긴다"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    setup_korean_font()

    try:
        frame = schedule_frame(cfg)
        csv_path = output_dir / 'schedule.csv'
        frame.to_csv(csv_path, index=False)

        final_m = int(frame['sinusoidal'].iloc[-1])
        grid = ScheduleCalculator.sigma_grid(final_m, sigma_min, sigma_max, rho)
        grid_path = output_dir / 'sigma_grid.csv'
        pd.DataFrame({'i': np.arange(1, grid.size + 1), 'sigma': grid.sigmas}).to_csv(grid_path, index=False)

        fig, (ax_m, ax_grid) = plt.subplots(2, 1, figsize=(10, 7), facecolor='white',
                                            gridspec_kw={'height_ratios': [3, 2], 'hspace': 0.3})
        ax_m.step(frame['step'], frame['sinusoidal'], where='post', color=SINUSOIDAL_COLOR,
                  linewidth=2, label='sinusoidal')
        if 'exponential' in frame:
            ax_m.step(frame['step'], frame['exponential'], where='post', color=EXPONENTIAL_COLOR,
                      linewidth=1.5, label='exponential')
        ax_m.set_xlabel('k', fontsize=9)
        ax_m.legend(loc='upper left', fontsize=8, framealpha=0.7)
        style_axis(ax_m, 'M(k)', SINUSOIDAL_COLOR)

        ax_grid.scatter(np.arange(1, grid.size + 1), grid.sigmas, s=8, color=GRID_POINT_COLOR)
        ax_grid.set_yscale('log')
        ax_grid.set_xlabel('i', fontsize=9)
        style_axis(ax_grid, f'σ_i (M={grid.size}, log)', GRID_POINT_COLOR)

        fig.suptitle(f'이산화 스케줄  (s0={cfg.s0}, s1={cfg.s1}, K={cfg.K})',
                     fontsize=12, fontweight='bold', color='#1F2937')
        png_path = output_dir / 'schedule.png'
        fig.savefig(png_path, dpi=150, bbox_inches='tight', facecolor='white', edgecolor='none')
        plt.close(fig)
        logger.info(f"스케줄 그래프가 저장되었습니다: {png_path}")
        return [png_path, csv_path, grid_path]

    except Exception as e:
        logger.error(f"스케줄 그래프 생성 중 오류 발생: {str(e)}")
        raise
