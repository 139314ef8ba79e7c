"""
CSV工具函数
"""

import csv
import logging
from pathlib import Path
from typing import Any, Iterable, List, Sequence

from ..core.exceptions import ProfileIOError

logger = logging.getLogger(__name__)


class CSVUtils:
    """CSV工具类，数值统一以往返精确的十进制写出"""

    @staticmethod
    def format_value(value: Any) -> str:
        """浮点数按 17 位有效数字输出，其余原样"""
        if isinstance(value, float):
            return '%.17g' % value
        if hasattr(value, 'dtype') and value.dtype.kind == 'f':
            return '%.17g' % float(value)
        return str(value)

    @staticmethod
    def write_rows(file_path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
        """写入CSV文件，返回数据行数"""
        file_path = Path(file_path)
        count = 0
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(header)
                for row in rows:
                    writer.writerow([CSVUtils.format_value(v) for v in row])
                    count += 1
        except OSError as e:
            logger.error(f"写入CSV文件失败 {file_path}: {e}")
            raise ProfileIOError(f"写入CSV文件失败 {file_path}: {e}") from e
        return count

    @staticmethod
    def read_header(file_path: Path) -> List[str]:
        """读取CSV表头"""
        try:
            with open(file_path, 'r', newline='', encoding='utf-8') as f:
                return next(csv.reader(f), [])
        except OSError as e:
            logger.error(f"读取CSV文件失败 {file_path}: {e}")
            raise ProfileIOError(f"读取CSV文件失败 {file_path}: {e}") from e
