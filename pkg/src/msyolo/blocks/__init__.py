from .accounting import Counts, lads_vs_strided_report
from .cbs import CBS
from .dcfem import DCFEM, DcfemConfig
from .dwr import DWR, MSDRM, DwrConfig, MsDrmConfig
from .lads import LADS, LadsConfig
from .module import BatchNorm2d, Conv2d, MissingWeightError, Module, set_identity_bn

__all__ = [
    "BatchNorm2d",
    "CBS",
    "Conv2d",
    "Counts",
    "DCFEM",
    "DWR",
    "DcfemConfig",
    "DwrConfig",
    "LADS",
    "LadsConfig",
    "MSDRM",
    "MissingWeightError",
    "Module",
    "MsDrmConfig",
    "lads_vs_strided_report",
    "set_identity_bn",
]
