from pathlib import Path
import logging

logger = logging.getLogger(__name__)


class CheckpointCleaner:
    def __init__(self, target_dir, keep=3, pattern='step_*.ckpt'):
        """
        체크포인트 정리 클래스
        :param target_dir: 정리할 디렉토리 경로
        :param keep: 남길 최신 체크포인트 개수
        :param pattern: 정리 대상 파일 패턴 (이름 순서 = 단계 순서)
        """
        if keep < 1:
            raise ValueError(f"keep은 1 이상이어야 합니다: {keep}")
        self.target_dir = Path(target_dir)
        self.keep = keep
        self.pattern = pattern

    def remove_old_checkpoints(self, protect=None):
        """최신 keep개를 제외한 체크포인트 삭제 (protect 경로는 항상 보존)"""
        if not self.target_dir.exists() or not self.target_dir.is_dir():
            logger.warning(f"대상 디렉토리가 존재하지 않거나 디렉토리가 아닙니다: {self.target_dir}")
            return []

        protected = {Path(p).resolve() for p in (protect or [])}
        removed = []
        try:
            files = sorted(f for f in self.target_dir.glob(self.pattern) if f.is_file())
            for file in files[:-self.keep]:
                if file.resolve() in protected:
                    continue
                file.unlink()
                removed.append(file)
                logger.info(f"삭제된 체크포인트: {file}")
        except Exception as e:
            logger.error(f"체크포인트 삭제 중 오류 발생: {str(e)}")
            raise
        return removed
