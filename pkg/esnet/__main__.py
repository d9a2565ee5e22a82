from esnet.cli import main

main()
