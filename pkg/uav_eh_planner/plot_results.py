#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
结果作图：收敛曲线 (stages.csv)、学习曲线 (curves.csv)、方法对比柱状图 (compare.csv)

  python plot_results.py stages results/offline_bell/seed_0/stages.csv
  python plot_results.py curves results/carl_afternoon/seed_0/curves.csv results/rl_afternoon/seed_0/curves.csv
  python plot_results.py compare results/compare/compare.csv
"""

import argparse
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

# 设置matplotlib参数以提高SVG清晰度
plt.rcParams['figure.dpi'] = 300
plt.rcParams['savefig.dpi'] = 300
plt.rcParams['svg.fonttype'] = 'none'
plt.rcParams['axes.linewidth'] = 1.5
plt.rcParams['grid.linewidth'] = 1.0
plt.rcParams['font.family'] = 'serif'
plt.rcParams['font.serif'] = ['Times New Roman', 'Times', 'DejaVu Serif']
plt.rcParams['mathtext.fontset'] = 'stix'

COLORS = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f']
SMOOTH_WINDOW = 200


def _finish(fig, ax, path: str):
    ax.grid(True, alpha=0.4, linestyle='--', linewidth=1.2)
    ax.legend(loc='best', framealpha=0.95, fontsize=11, edgecolor='black')
    fig.tight_layout()
    fig.savefig(path, format=os.path.splitext(path)[1].lstrip('.') or 'svg', bbox_inches='tight', pad_inches=0.15)
    plt.close(fig)
    print(f"图表已保存为 '{path}'")


def plot_stages(paths, out: str):
    """外层迭代中各阶段（关联/航迹/功率）后的目标值"""
    fig, ax = plt.subplots(figsize=(8, 5))
    for i, path in enumerate(paths):
        df = pd.read_csv(path)
        ax.plot(np.arange(len(df)), df['objective'] / 1e6, 'o-', color=COLORS[i % len(COLORS)],
                linewidth=2.0, markersize=5, label=os.path.basename(os.path.dirname(path)) or path)
    ax.set_xlabel('Stage', fontsize=14, fontweight='bold')
    ax.set_ylabel('Worst accumulated rate (Mbit/s)', fontsize=14, fontweight='bold')
    _finish(fig, ax, out)


def plot_curves(paths, out: str, column: str = 'return', window: int = SMOOTH_WINDOW):
    """滑动平均后的学习曲线"""
    fig, ax = plt.subplots(figsize=(8, 5))
    for i, path in enumerate(paths):
        df = pd.read_csv(path)
        smooth = df[column].rolling(window, min_periods=1).mean()
        label = os.path.basename(os.path.dirname(os.path.dirname(path))) or path
        ax.plot(df['episode'], smooth, '-', color=COLORS[i % len(COLORS)], linewidth=2.0, label=label)
    ax.set_xlabel('Episode', fontsize=14, fontweight='bold')
    ax.set_ylabel(column.replace('_', ' ').capitalize(), fontsize=14, fontweight='bold')
    _finish(fig, ax, out)


def plot_compare(path: str, out: str):
    df = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(8, 5))
    x = np.arange(len(df))
    ax.bar(x - 0.2, df['worst_rate'] / 1e6, width=0.4, color=COLORS[0], label='Average channel')
    ax.bar(x + 0.2, df['eval_worst_rate'] / 1e6, width=0.4, color=COLORS[1], label='Random realizations')
    ax.set_xticks(x)
    ax.set_xticklabels(df['method'], fontsize=12)
    ax.set_ylabel('Worst accumulated rate (Mbit/s)', fontsize=14, fontweight='bold')
    _finish(fig, ax, out)


def main():
    parser = argparse.ArgumentParser(description="根据实验 CSV 作图")
    parser.add_argument('kind', choices=['stages', 'curves', 'compare'])
    parser.add_argument('paths', nargs='+')
    parser.add_argument('--out', type=str, default=None, help="输出文件（默认 <kind>.svg）")
    parser.add_argument('--column', type=str, default='return', help="curves 作图列: return / success / worst_rate")
    args = parser.parse_args()
    out = args.out or f'{args.kind}.svg'
    if args.kind == 'stages':
        plot_stages(args.paths, out)
    elif args.kind == 'curves':
        plot_curves(args.paths, out, args.column)
    else:
        plot_compare(args.paths[0], out)


if __name__ == '__main__':
    main()
