import logging
import sys

from modules.commands import build_parser, run_command

# 로깅 설정
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('pfct.log'),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        logger.info(f"pfct {args.command} 명령을 시작합니다.")
        status = run_command(args.handler, args)
    except KeyboardInterrupt:
        logger.info("프로그램이 사용자에 의해 중단되었습니다.")
        status = 130
    finally:
        logger.info(f"pfct {args.command} 명령을 종료합니다.")
    sys.exit(status)


if __name__ == "__main__":
    main()
