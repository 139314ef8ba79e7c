"""
张量容器: 紧凑二进制数据 + JSON 索引

文件布局:
    8 字节魔数 b"SPAMTNS1"
    8 字节小端无符号整数: 索引长度 n
    n 字节 UTF-8 JSON 索引 {name: {dtype, shape, offset}}
    数据区: 各张量按 '<f8' 连续存放，offset 相对数据区起点
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..core.exceptions import ContainerFormatError

logger = logging.getLogger(__name__)

MAGIC = b"SPAMTNS1"
DTYPE = '<f8'


class TensorContainer:
    """参数/特征图的二进制读写"""

    @staticmethod
    def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
        index: Dict[str, Dict] = {}
        chunks = []
        offset = 0
        for name in sorted(tensors):
            array = np.ascontiguousarray(tensors[name], dtype=DTYPE)
            index[name] = {'dtype': DTYPE, 'shape': list(array.shape), 'offset': offset}
            raw = array.tobytes()
            chunks.append(raw)
            offset += len(raw)
        header = json.dumps(index, sort_keys=True, separators=(',', ':')).encode('utf-8')
        return MAGIC + struct.pack('<Q', len(header)) + header + b''.join(chunks)

    @staticmethod
    def decode(payload: bytes) -> Dict[str, np.ndarray]:
        if len(payload) < 16 or payload[:8] != MAGIC:
            raise ContainerFormatError("不是有效的张量容器(魔数不符)")
        (header_len,) = struct.unpack('<Q', payload[8:16])
        if 16 + header_len > len(payload):
            raise ContainerFormatError("索引长度超出文件大小")
        try:
            index = json.loads(payload[16:16 + header_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ContainerFormatError(f"索引解析失败: {e}") from e
        if not isinstance(index, dict):
            raise ContainerFormatError("索引必须为 JSON 对象")

        data = payload[16 + header_len:]
        tensors = {}
        for name, entry in index.items():
            try:
                dtype = np.dtype(entry['dtype'])
                shape = tuple(int(s) for s in entry['shape'])
                offset = int(entry['offset'])
            except (KeyError, TypeError, ValueError) as e:
                raise ContainerFormatError(f"张量 {name} 的索引项无效: {e}") from e
            if dtype != np.dtype(DTYPE):
                raise ContainerFormatError(f"张量 {name} 的类型不受支持: {dtype}")
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + count * dtype.itemsize
            if offset < 0 or end > len(data):
                raise ContainerFormatError(f"张量 {name} 越过数据区末尾")
            tensors[name] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        return tensors

    @staticmethod
    def save(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(TensorContainer.encode(tensors))
        except OSError as e:
            logger.error(f"写入张量容器失败 {path}: {e}")
            raise ContainerFormatError(f"写入张量容器失败 {path}: {e}") from e
        logger.debug(f"张量容器已写入: {path} ({len(tensors)} 项)")
        return path

    @staticmethod
    def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
        path = Path(path)
        try:
            payload = path.read_bytes()
        except OSError as e:
            logger.error(f"读取张量容器失败 {path}: {e}")
            raise ContainerFormatError(f"读取张量容器失败 {path}: {e}") from e
        return TensorContainer.decode(payload)
