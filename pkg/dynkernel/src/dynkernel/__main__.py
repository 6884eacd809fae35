from .wire import main

main()
