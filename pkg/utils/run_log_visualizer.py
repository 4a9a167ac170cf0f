# utils/run_log_visualizer.py

from pathlib import Path
import glob
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import matplotlib.font_manager as fm
import numpy as np

from modules.run_log import LOSS_WINDOW, RunLog

logger = logging.getLogger(__name__)

BG_COLOR = '#FAFBFC'
GRID_COLOR = '#E5E7EB'
LOSS_COLOR = '#2563EB'
SSIM_COLOR = '#16A34A'
PSNR_COLOR = '#F59E0B'


def setup_korean_font():
    """시스템에서 한글 폰트를 찾아 matplotlib에 설정"""
    # 1) 시스템 폰트 경로에서 나눔 폰트 직접 탐색 (도커 환경 대응)
    nanum_paths = glob.glob('/usr/share/fonts/**/Nanum*.ttf', recursive=True)
    if nanum_paths:
        fm.fontManager.addfont(nanum_paths[0])
        plt.rcParams['font.family'] = fm.FontProperties(fname=nanum_paths[0]).get_name()
        plt.rcParams['axes.unicode_minus'] = False
        return True

    # 2) 등록된 폰트 목록에서 한글 폰트 탐색 (macOS/Windows)
    for font_name in ['Apple SD Gothic Neo', 'Nanum Gothic', 'AppleGothic', 'Malgun Gothic']:
        if any(f.name == font_name for f in fm.fontManager.ttflist):
            plt.rcParams['font.family'] = font_name
            plt.rcParams['axes.unicode_minus'] = False
            return True

    logger.debug("한글 폰트를 찾을 수 없습니다. 그래프 라벨이 깨질 수 있습니다.")
    return False


def style_axis(ax, ylabel: str, color: str):
    """배경, 격자, 테두리 공통 스타일"""
    ax.set_facecolor(BG_COLOR)
    ax.set_ylabel(ylabel, fontsize=10, fontweight='bold', color=color)
    ax.yaxis.grid(True, which='both', color=GRID_COLOR, linewidth=0.8)
    ax.xaxis.grid(False)
    ax.tick_params(axis='both', labelsize=8, colors='#374151')
    for spine in ax.spines.values():
        spine.set_visible(False)


class RunLogVisualizer:
    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        setup_korean_font()

    @staticmethod
    def _plot_loss(ax, run_log: RunLog, window: int):
        """학습 손실 (로그 스케일) + 이동 평균"""
        frame = run_log.step_frame()
        positive = frame[frame['loss'] > 0]
        if positive.empty:
            ax.text(0.5, 0.5, '손실 기록 없음', transform=ax.transAxes,
                    ha='center', va='center', fontsize=10, color='#9CA3AF')
            style_axis(ax, '손실', LOSS_COLOR)
            return

        ax.plot(positive['step'], positive['loss'], color=LOSS_COLOR, linewidth=0.6, alpha=0.35, label='loss')
        average = run_log.loss_moving_average(window)
        average = average[average > 0]
        ax.plot(average.index, average.to_numpy(), color=LOSS_COLOR, linewidth=2,
                label=f'이동 평균 ({window})')
        ax.set_yscale('log')
        ax.legend(loc='upper right', fontsize=7, framealpha=0.7)
        style_axis(ax, '평균 학습 손실 (log)', LOSS_COLOR)

    @staticmethod
    def _plot_metric(ax, run_log: RunLog, column: str, label: str, color: str):
        """검증 지표 곡선 (로그 스케일)"""
        frame = run_log.eval_frame()
        values = frame[np.isfinite(frame[column]) & (frame[column] > 0)]
        if values.empty:
            ax.text(0.5, 0.5, f'{label} 기록 없음', transform=ax.transAxes,
                    ha='center', va='center', fontsize=10, color='#9CA3AF')
        else:
            ax.plot(values['step'], values[column], color=color, linewidth=1.5, marker='o', markersize=3)
            latest = values.iloc[-1]
            ax.annotate(f'{latest[column]:.4g}', xy=(latest['step'], latest[column]),
                        xytext=(8, 0), textcoords='offset points',
                        fontsize=9, fontweight='bold', color=color, va='center')
            ax.set_yscale('log')
        style_axis(ax, f'검증 {label} (log)', color)

    def create_visualization(self, run_log: RunLog, seed: int, window: int = LOSS_WINDOW) -> list[Path]:
        """학습 손실 곡선과 검증 지표 곡선 PNG를 만든다"""
        try:
            saved = []

            fig, ax = plt.subplots(1, 1, figsize=(10, 4), facecolor='white')
            self._plot_loss(ax, run_log, window)
            ax.set_xlabel('step', fontsize=9)
            fig.suptitle(f'학습 손실  (seed={seed})', fontsize=12, fontweight='bold', color='#1F2937')
            saved.append(self._save(fig, 'loss_curve.png'))

            fig, (ax_ssim, ax_psnr) = plt.subplots(2, 1, figsize=(10, 6), facecolor='white', sharex=True,
                                                   gridspec_kw={'hspace': 0.12})
            self._plot_metric(ax_ssim, run_log, 'ssim', 'SSIM', SSIM_COLOR)
            self._plot_metric(ax_psnr, run_log, 'psnr', 'PSNR [dB]', PSNR_COLOR)
            ax_psnr.set_xlabel('step', fontsize=9)
            fig.suptitle(f'검증 지표  (seed={seed})', fontsize=12, fontweight='bold', color='#1F2937')
            saved.append(self._save(fig, 'metric_curves.png'))

            return saved

        except Exception as e:
            logger.error(f"그래프 생성 중 오류 발생: {str(e)}")
            raise

    def _save(self, fig, filename: str) -> Path:
        save_path = self.output_dir / filename
        fig.tight_layout(rect=[0, 0, 1, 0.95])
        fig.savefig(save_path, dpi=150, bbox_inches='tight', facecolor='white', edgecolor='none')
        plt.close(fig)
        logger.info(f"그래프가 저장되었습니다: {save_path}")
        return save_path
