"""
分析器模块
"""

from .profiler import (
    FrequencyProfile,
    band_energy_ratio,
    frequency_response,
    relative_log_amplitude,
    simulate_campaign,
    spectral_decomposition_check,
)
from .report_generator import ReportGenerator

__all__ = [
    'FrequencyProfile', 'frequency_response', 'simulate_campaign', 'band_energy_ratio',
    'spectral_decomposition_check', 'relative_log_amplitude', 'ReportGenerator',
]
