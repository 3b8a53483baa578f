from wavrefine.cli import main

main()
