"""
报告生成器
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np

from .. import __version__
from ..core.exceptions import ProfileIOError
from ..utils.hash_utils import HashUtils

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _to_jsonable(value: Any) -> Any:
    """numpy 标量与数组转为原生类型"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"无法序列化的类型: {type(value)}")


class ReportGenerator:
    """JSON 报告与运行清单的写出"""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.written: List[Path] = []

    def _write(self, path: Path, payload: Dict[str, Any]) -> Path:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True, default=_to_jsonable)
                f.write('\n')
        except OSError as e:
            logger.error(f"写出报告失败 {path}: {e}")
            raise ProfileIOError(f"写出报告失败 {path}: {e}") from e
        logger.info(f"报告已生成: {path}")
        return path

    def generate_json_report(self, name: str, data: Dict[str, Any]) -> Path:
        """写出 <output_dir>/<name>.json 并登记到本次运行的输出列表"""
        path = self._write(self.output_dir / f"{name}.json", data)
        self.register(path)
        return path

    def register(self, path: Union[str, Path]) -> None:
        """登记一个需要写入清单摘要的输出文件"""
        path = Path(path)
        if path not in self.written:
            self.written.append(path)

    def write_manifest(self, command: str, flags: Dict[str, Any], seed: Optional[int],
                       outputs: Optional[Iterable[Union[str, Path]]] = None) -> Path:
        """
        运行清单: {command, flags, seed, version, outputs: [{path, sha256}]}

        路径相对于输出目录记录，以便不同目录下的重复运行得到相同清单。
        """
        paths = list(outputs) if outputs is not None else list(self.written)
        entries = []
        for entry in HashUtils.digest_outputs(paths):
            path = Path(entry['path'])
            try:
                entry['path'] = str(path.relative_to(self.output_dir))
            except ValueError:
                entry['path'] = str(path)
            entries.append(entry)
        manifest = {
            'command': command,
            'flags': flags,
            'seed': seed,
            'version': __version__,
            'outputs': entries,
        }
        return self._write(self.output_dir / MANIFEST_NAME, manifest)

    @staticmethod
    def load_json(path: Union[str, Path]) -> Dict[str, Any]:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ProfileIOError(f"读取报告失败 {path}: {e}") from e
